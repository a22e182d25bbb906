#pragma once

#include "mhn/adam.hpp"
#include "mhn/attention.hpp"
#include "mhn/data.hpp"
#include "mhn/decoders.hpp"
#include "mhn/errors.hpp"
#include "mhn/gradcheck.hpp"
#include "mhn/gradcheck_suite.hpp"
#include "mhn/model.hpp"
#include "mhn/params.hpp"
#include "mhn/pvr.hpp"
#include "mhn/rmi.hpp"
#include "mhn/rng.hpp"
#include "mhn/sampling.hpp"
#include "mhn/tensor.hpp"
#include "mhn/text.hpp"
#include "mhn/train.hpp"
