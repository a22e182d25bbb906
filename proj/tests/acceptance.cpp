#include "mhn/mhn.hpp"
int main() { return 0; }
