#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mhn/errors.hpp"
#include "mhn/params.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

// Frame indices for one temporal scale: 2^{n-1} clips of T frames each,
// chosen with a uniform stride over the source video.
struct ClipPlan {
  std::size_t scale = 1;
  std::vector<std::vector<std::size_t>> clips;

  std::size_t total_frames() const {
    std::size_t n = 0;
    for (const auto& c : clips) n += c.size();
    return n;
  }
};

// Rows of visual features at one scale: for each clip, T appearance rows
// followed by its single motion row, clips in temporal order.
struct ScaleBundle {
  std::size_t scale = 1;
  Tensor x;  // [length, d]
  std::size_t length = 0;
};

// Per-video features as stored on disk: one appearance and one motion
// latent per frame.
struct FeatureRecord {
  std::string video_id;
  std::size_t frames = 0;
  std::size_t app_dim = 0;
  std::size_t mot_dim = 0;
  std::vector<double> appearance;  // [frames, app_dim] row-major
  std::vector<double> motion;      // [frames, mot_dim] row-major
};

inline std::size_t clips_at_scale(std::size_t n) { return std::size_t{1} << (n - 1); }

// L = 2^{n-1} (T + 1): T appearance rows plus one motion row per clip.
inline std::size_t sequence_length(std::size_t T, std::size_t n) {
  if (T < 1 || n < 1) throw ContractError("sequence_length: T and n must be positive");
  return clips_at_scale(n) * (T + 1);
}

// Uniform-stride selection of T * 2^{n-1} frame indices, nondecreasing in
// time. Videos shorter than the budget repeat frames (index stretching),
// so the sampler is total over all frame counts.
inline ClipPlan sample_clip_indices(std::size_t frames, std::size_t T, std::size_t n) {
  if (frames < 1 || T < 1 || n < 1)
    throw ContractError("sample_clip_indices: frames, T and n must be positive");
  const std::size_t num_clips = clips_at_scale(n);
  const std::size_t budget = T * num_clips;
  ClipPlan plan;
  plan.scale = n;
  plan.clips.assign(num_clips, {});
  for (std::size_t j = 0; j < budget; ++j) {
    const std::size_t idx = (j * frames / budget) % frames;
    plan.clips[j / T].push_back(idx);
  }
  return plan;
}

// Projects the planned frames into model space and assembles the
// appearance-motion sequence with its positional table added.
inline ScaleBundle assemble_scale(const FeatureRecord& record, const ClipPlan& plan,
                                  const LinearParams& app_proj, const LinearParams& mot_proj,
                                  const Tensor& pos_emb) {
  const std::size_t T = plan.clips.empty() ? 0 : plan.clips.front().size();
  if (T == 0) throw ContractError("assemble_scale: empty clip plan");
  if (app_proj.w.dim(0) != record.app_dim)
    throw DimensionError("assemble_scale: appearance projection expects width " +
                         std::to_string(app_proj.w.dim(0)) + ", features have " +
                         std::to_string(record.app_dim));
  if (mot_proj.w.dim(0) != record.mot_dim)
    throw DimensionError("assemble_scale: motion projection expects width " +
                         std::to_string(mot_proj.w.dim(0)) + ", features have " +
                         std::to_string(record.mot_dim));

  std::vector<std::size_t> flat;
  flat.reserve(plan.total_frames());
  for (const auto& clip : plan.clips)
    for (std::size_t idx : clip) flat.push_back(idx % record.frames);

  // Frame features are constants; only projections and the positional
  // table carry gradients.
  std::vector<double> app_rows(flat.size() * record.app_dim);
  for (std::size_t r = 0; r < flat.size(); ++r)
    std::copy_n(record.appearance.begin() + flat[r] * record.app_dim, record.app_dim,
                app_rows.begin() + r * record.app_dim);
  Tensor app = linear(Tensor::from({flat.size(), record.app_dim}, std::move(app_rows)), app_proj);

  // One motion row per clip: mean of the clip's per-frame motion latents,
  // then the linear map to model width.
  std::vector<double> mot_means(plan.clips.size() * record.mot_dim, 0.0);
  for (std::size_t c = 0; c < plan.clips.size(); ++c) {
    for (std::size_t idx : plan.clips[c]) {
      const double* row = record.motion.data() + (idx % record.frames) * record.mot_dim;
      for (std::size_t j = 0; j < record.mot_dim; ++j) mot_means[c * record.mot_dim + j] += row[j];
    }
    for (std::size_t j = 0; j < record.mot_dim; ++j)
      mot_means[c * record.mot_dim + j] /= static_cast<double>(T);
  }
  Tensor mot =
      linear(Tensor::from({plan.clips.size(), record.mot_dim}, std::move(mot_means)), mot_proj);

  std::vector<Tensor> rows;
  rows.reserve(2 * plan.clips.size());
  for (std::size_t c = 0; c < plan.clips.size(); ++c) {
    rows.push_back(slice_rows(app, c * T, (c + 1) * T));
    rows.push_back(slice_rows(mot, c, c + 1));
  }
  Tensor seq = concat_rows(rows);
  if (pos_emb.shape() != seq.shape())
    throw DimensionError("assemble_scale: positional table " +
                         detail::shape_str(pos_emb.shape()) + " does not match sequence " +
                         detail::shape_str(seq.shape()));
  ScaleBundle bundle;
  bundle.scale = plan.scale;
  bundle.x = add(seq, pos_emb);
  bundle.length = bundle.x.dim(0);
  return bundle;
}

}  // namespace mhn
