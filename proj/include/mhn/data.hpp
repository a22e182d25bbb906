#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mhn/errors.hpp"
#include "mhn/model.hpp"
#include "mhn/params.hpp"
#include "mhn/rng.hpp"
#include "mhn/sampling.hpp"
#include "mhn/text.hpp"

namespace mhn {

// ---------------------------------------------------------------------------
// Binary feature store
//
// magic "MHNF1", then per record:
//   u32 id length, UTF-8 id, u32 frames, u32 app_dim, u32 mot_dim,
//   frames*app_dim little-endian f32 appearance, frames*mot_dim f32 motion.
// f32 on disk, f64 in memory.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kFeatureMagic[5] = {'M', 'H', 'N', 'F', '1'};

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& os, const std::vector<double>& v) {
  std::vector<float> buf(v.begin(), v.end());
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

}  // namespace detail

class FeatureWriter {
 public:
  explicit FeatureWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open feature file for writing: " + path);
    out_.write(detail::kFeatureMagic, 5);
  }

  void write(const FeatureRecord& r) {
    if (r.frames < 1 || r.appearance.size() != r.frames * r.app_dim ||
        r.motion.size() != r.frames * r.mot_dim)
      throw ContractError("feature record '" + r.video_id + "' has inconsistent dimensions");
    detail::write_u32(out_, static_cast<std::uint32_t>(r.video_id.size()));
    out_.write(r.video_id.data(), static_cast<std::streamsize>(r.video_id.size()));
    detail::write_u32(out_, static_cast<std::uint32_t>(r.frames));
    detail::write_u32(out_, static_cast<std::uint32_t>(r.app_dim));
    detail::write_u32(out_, static_cast<std::uint32_t>(r.mot_dim));
    detail::write_f32(out_, r.appearance);
    detail::write_f32(out_, r.motion);
    if (!out_) throw IoError("write failure on feature file");
  }

 private:
  std::ofstream out_;
};

// Streaming reader: holds one record at a time, so iteration over a file
// needs constant memory regardless of record count.
class FeatureReader {
 public:
  explicit FeatureReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open feature file: " + path);
    char magic[5];
    in_.read(magic, 5);
    if (!in_ || std::memcmp(magic, detail::kFeatureMagic, 5) != 0)
      throw FormatError("bad magic in feature file " + path + " at byte 0");
    offset_ = 5;
  }

  std::optional<FeatureRecord> next() {
    if (in_.peek() == std::char_traits<char>::eof()) return std::nullopt;
    const std::size_t record_start = offset_;
    FeatureRecord r;
    const std::uint32_t id_len = detail::read_u32(in_);
    check("id length", record_start);
    r.video_id.resize(id_len);
    in_.read(r.video_id.data(), id_len);
    check("id bytes", record_start);
    const std::uint32_t frames = detail::read_u32(in_);
    const std::uint32_t app_dim = detail::read_u32(in_);
    const std::uint32_t mot_dim = detail::read_u32(in_);
    check("header", record_start);
    if (frames < 1)
      throw FormatError("feature record " + std::to_string(index_) + " at byte " +
                        std::to_string(record_start) + " declares zero frames");
    r.frames = frames;
    r.app_dim = app_dim;
    r.mot_dim = mot_dim;
    r.appearance = read_block(frames * app_dim, record_start, "appearance");
    r.motion = read_block(frames * mot_dim, record_start, "motion");
    offset_ = 5 + static_cast<std::size_t>(in_.tellg() - std::streamoff(5));
    ++index_;
    return r;
  }

 private:
  void check(const char* what, std::size_t record_start) {
    if (!in_)
      throw FormatError("truncated " + std::string(what) + " in feature record " +
                        std::to_string(index_) + " starting at byte " +
                        std::to_string(record_start) + " of " + path_);
  }

  std::vector<double> read_block(std::size_t count, std::size_t record_start, const char* what) {
    std::vector<float> buf(count);
    in_.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(count * sizeof(float)));
    check(what, record_start);
    return std::vector<double>(buf.begin(), buf.end());
  }

  std::ifstream in_;
  std::string path_;
  std::size_t offset_ = 0;
  std::size_t index_ = 0;
};

inline std::unordered_map<std::string, FeatureRecord> load_feature_map(const std::string& path) {
  std::unordered_map<std::string, FeatureRecord> out;
  FeatureReader reader(path);
  while (auto r = reader.next()) out.emplace(r->video_id, std::move(*r));
  return out;
}

// ---------------------------------------------------------------------------
// QA records (JSON Lines) and dataset metadata
// ---------------------------------------------------------------------------

struct QARecord {
  std::string video_id;
  std::string task;  // frameqa_attr | action | transition | count | mixed
  std::vector<std::string> question;
  int answer = 0;  // class id, count value, or correct candidate index
  std::vector<std::vector<std::string>> candidates;  // multi-choice only
};

inline void write_qa_records(const std::string& path, const std::vector<QARecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open QA file for writing: " + path);
  for (const QARecord& r : records) {
    nlohmann::json j;
    j["video_id"] = r.video_id;
    j["task"] = r.task;
    j["question"] = r.question;
    j["answer"] = r.answer;
    if (!r.candidates.empty()) j["candidates"] = r.candidates;
    out << j.dump() << "\n";
  }
}

inline std::vector<QARecord> read_qa_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open QA file: " + path);
  std::vector<QARecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("bad JSON on line " + std::to_string(line_no) + " of " + path + ": " +
                        e.what());
    }
    QARecord r;
    r.video_id = j.at("video_id").get<std::string>();
    r.task = j.at("task").get<std::string>();
    r.question = j.at("question").get<std::vector<std::string>>();
    r.answer = j.at("answer").get<int>();
    if (j.contains("candidates"))
      r.candidates = j.at("candidates").get<std::vector<std::vector<std::string>>>();
    const bool is_mc = r.task == "transition";
    if (is_mc != !r.candidates.empty())
      throw FormatError("line " + std::to_string(line_no) + " of " + path + ": candidates " +
                        (is_mc ? "missing for" : "present on") + " task '" + r.task + "'");
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_vocab(const std::string& path, const Vocab& vocab) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open vocab file for writing: " + path);
  out << vocab.to_json().dump(2) << "\n";
}

inline Vocab read_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab file: " + path);
  nlohmann::json j;
  in >> j;
  return Vocab::from_json(j);
}

struct DatasetMeta {
  std::size_t frames = 0;
  std::size_t app_dim = 0;
  std::size_t mot_dim = 0;
  std::size_t num_candidates = 0;
  int count_min = 1;
  int count_max = 10;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> object_classes;
  std::vector<std::string> motif_classes;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["frames"] = frames;
    j["app_dim"] = app_dim;
    j["mot_dim"] = mot_dim;
    j["num_candidates"] = num_candidates;
    j["count_min"] = count_min;
    j["count_max"] = count_max;
    j["sigma"] = sigma;
    j["seed"] = seed;
    j["object_classes"] = object_classes;
    j["motif_classes"] = motif_classes;
    return j;
  }

  static DatasetMeta from_json(const nlohmann::json& j) {
    DatasetMeta m;
    m.frames = j.at("frames").get<std::size_t>();
    m.app_dim = j.at("app_dim").get<std::size_t>();
    m.mot_dim = j.at("mot_dim").get<std::size_t>();
    m.num_candidates = j.at("num_candidates").get<std::size_t>();
    m.count_min = j.at("count_min").get<int>();
    m.count_max = j.at("count_max").get<int>();
    m.sigma = j.at("sigma").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.object_classes = j.at("object_classes").get<std::vector<std::string>>();
    m.motif_classes = j.at("motif_classes").get<std::vector<std::string>>();
    return m;
  }
};

inline void write_meta(const std::string& path, const DatasetMeta& meta) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open meta file for writing: " + path);
  out << meta.to_json().dump(2) << "\n";
}

inline DatasetMeta read_meta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open meta file: " + path);
  nlohmann::json j;
  in >> j;
  return DatasetMeta::from_json(j);
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// magic "MHNC1", u64 manifest length, manifest JSON (model config,
// parameter names/shapes/offsets, training step), then a little-endian
// f64 payload. Offsets are bytes from the payload start.
// ---------------------------------------------------------------------------

namespace detail {
constexpr char kCheckpointMagic[5] = {'M', 'H', 'N', 'C', '1'};
}

inline void save_checkpoint(const ParamStore& params, const ModelConfig& cfg, std::size_t step,
                            const std::string& path) {
  nlohmann::json manifest;
  manifest["model"] = cfg.to_json();
  manifest["step"] = step;
  nlohmann::json plist = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : params.entries()) {
    nlohmann::json p;
    p["name"] = name;
    p["shape"] = t.shape();
    p["offset"] = offset;
    offset += t.numel() * sizeof(double);
    plist.push_back(p);
  }
  manifest["params"] = plist;
  const std::string mbytes = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(detail::kCheckpointMagic, 5);
  const std::uint64_t mlen = mbytes.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mbytes.data(), static_cast<std::streamsize>(mbytes.size()));
  for (const auto& [name, t] : params.entries())
    out.write(reinterpret_cast<const char*>(t.value().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!out) throw IoError("write failure on checkpoint " + path);
}

// Reads only the manifest: the stored model config and training step.
inline std::pair<ModelConfig, std::size_t> read_checkpoint_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, 5) != 0)
    throw FormatError("bad magic in checkpoint " + path + " at byte 0");
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  if (!in) throw FormatError("truncated checkpoint header in " + path);
  std::string mbytes(mlen, '\0');
  in.read(mbytes.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw FormatError("truncated checkpoint manifest in " + path);
  nlohmann::json manifest = nlohmann::json::parse(mbytes);
  return {ModelConfig::from_json(manifest.at("model")),
          manifest.at("step").get<std::size_t>()};
}

// Loads a checkpoint into an existing store. The stored model config must
// match the expected one, and every parameter must agree in name and
// shape; the error lists up to the first three offenders.
inline std::size_t load_checkpoint(ParamStore& params, const ModelConfig& expected,
                                   const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, 5) != 0)
    throw FormatError("bad magic in checkpoint " + path + " at byte 0");
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  if (!in) throw FormatError("truncated checkpoint header in " + path);
  std::string mbytes(mlen, '\0');
  in.read(mbytes.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw FormatError("truncated checkpoint manifest in " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mbytes);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint manifest in " + path + ": " + e.what());
  }

  if (manifest.at("model") != expected.to_json())
    throw ConfigError("checkpoint " + path + " was written for a different model config");

  struct Entry {
    Shape shape;
    std::size_t offset;
  };
  std::unordered_map<std::string, Entry> stored;
  for (const auto& p : manifest.at("params"))
    stored[p.at("name").get<std::string>()] = {p.at("shape").get<Shape>(),
                                               p.at("offset").get<std::size_t>()};

  std::vector<std::string> offenders;
  for (const auto& [name, t] : params.entries()) {
    auto it = stored.find(name);
    if (it == stored.end())
      offenders.push_back("missing '" + name + "'");
    else if (it->second.shape != t.shape())
      offenders.push_back("shape mismatch '" + name + "'");
  }
  if (stored.size() != params.size())
    for (const auto& [name, e] : stored)
      if (!params.contains(name)) offenders.push_back("unexpected '" + name + "'");
  if (!offenders.empty()) {
    std::sort(offenders.begin(), offenders.end());
    std::string msg = "checkpoint " + path + " does not match the model:";
    for (std::size_t i = 0; i < std::min<std::size_t>(3, offenders.size()); ++i)
      msg += " " + offenders[i] + ";";
    throw ConfigError(msg);
  }

  const std::streampos payload_start = in.tellg();
  for (auto& [name, t] : params.entries()) {
    Tensor tensor = t;
    const Entry& e = stored.at(name);
    in.seekg(payload_start + static_cast<std::streamoff>(e.offset));
    in.read(reinterpret_cast<char*>(tensor.mutable_value().data()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    if (!in) throw FormatError("truncated checkpoint payload for '" + name + "' in " + path);
  }
  return manifest.at("step").get<std::size_t>();
}

// ---------------------------------------------------------------------------
// Synthetic VideoQA generator
//
// Per video, a latent timeline drives both feature channels:
//   - per-frame object ids; one majority object (frame-level cue)
//   - a background motif filling most of the video (global cue)
//   - r short bursts of a distinct "act" motif (fine-grained cue; r is the
//     count answer)
//   - distinct opening and closing motifs (the transition pair)
// Appearance row t = E_app[object_t] + noise, motion row t =
// E_mot[motif_t] + noise, with E_* fixed random matrices drawn from the
// seed. Tasks read different granularities of this timeline, so scale
// ablations have a measurable effect.
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  std::size_t train_videos = 2000;
  std::size_t val_videos = 300;
  std::size_t test_videos = 300;
  std::size_t frames = 128;
  std::size_t num_objects = 8;
  std::size_t num_motifs = 8;
  std::size_t app_dim = 64;
  std::size_t mot_dim = 64;
  double sigma = 0.05;
  int count_min = 1;
  int count_max = 3;
  std::size_t num_candidates = 4;
  double majority_fraction = 0.75;
  double motion_gain = 1.0;  // scale of motion latents relative to appearance
  std::size_t burst_len = 8;
  std::size_t opening_len = 12;
  std::size_t closing_len = 16;
  std::uint64_t seed = 7;

  void validate() const {
    if (train_videos < 1 || val_videos < 1 || test_videos < 1)
      throw ConfigError("synthetic: all split sizes must be >= 1");
    if (num_objects < 2 || num_motifs < 4)
      throw ConfigError("synthetic: need >= 2 objects and >= 4 motifs");
    if (sigma < 0) throw ConfigError("synthetic: sigma must be >= 0");
    if (count_min < 1 || count_min > count_max)
      throw ConfigError("synthetic: bad count range");
    if (num_candidates < 2) throw ConfigError("synthetic: num_candidates must be >= 2");
    if (burst_len < 2) throw ConfigError("synthetic: burst_len must be >= 2");
    const std::size_t middle = frames - opening_len - closing_len;
    const std::size_t needed =
        static_cast<std::size_t>(count_max) * burst_len + 4 * (count_max + 1);
    if (opening_len + closing_len >= frames || middle < needed)
      throw ConfigError("synthetic: frames too short for the configured count range");
    // The background motif must stay the global majority at max count.
    if (middle - static_cast<std::size_t>(count_max) * burst_len <=
        std::max({static_cast<std::size_t>(count_max) * burst_len, opening_len, closing_len}))
      throw ConfigError("synthetic: background motif would lose majority at count_max");
  }
};

namespace detail {

struct VideoLatents {
  std::vector<std::size_t> objects;  // per frame
  std::vector<std::size_t> motifs;   // per frame
  std::size_t majority_object = 0;
  std::size_t background_motif = 0;  // global majority motif
  std::size_t act_motif = 0;         // short-burst motif
  std::size_t opening_motif = 0;
  std::size_t closing_motif = 0;
  int repetitions = 0;
};

// Block-shuffled class assignment: exactly balanced over any window of
// full blocks, order randomized.
class BalancedPicker {
 public:
  BalancedPicker(std::size_t classes, Rng& rng) : classes_(classes), rng_(rng) {}

  std::size_t next() {
    if (pos_ == block_.size()) {
      block_.resize(classes_);
      for (std::size_t i = 0; i < classes_; ++i) block_[i] = i;
      rng_.shuffle(block_);
      pos_ = 0;
    }
    return block_[pos_++];
  }

 private:
  std::size_t classes_;
  Rng& rng_;
  std::vector<std::size_t> block_;
  std::size_t pos_ = 0;
};

inline VideoLatents make_video_latents(const SyntheticConfig& cfg, Rng& rng,
                                       std::size_t majority_object,
                                       std::size_t background_motif) {
  VideoLatents v;
  v.majority_object = majority_object;
  v.background_motif = background_motif;
  do {
    v.act_motif = rng.integer(cfg.num_motifs);
  } while (v.act_motif == v.background_motif);
  do {
    v.opening_motif = rng.integer(cfg.num_motifs);
  } while (v.opening_motif == v.background_motif || v.opening_motif == v.act_motif);
  do {
    v.closing_motif = rng.integer(cfg.num_motifs);
  } while (v.closing_motif == v.background_motif || v.closing_motif == v.act_motif ||
           v.closing_motif == v.opening_motif);

  // Objects: a fixed majority share at random positions, the rest drawn
  // from the other classes.
  const std::size_t majority_frames = static_cast<std::size_t>(
      std::ceil(cfg.majority_fraction * static_cast<double>(cfg.frames)));
  std::vector<std::size_t> order(cfg.frames);
  for (std::size_t i = 0; i < cfg.frames; ++i) order[i] = i;
  rng.shuffle(order);
  v.objects.assign(cfg.frames, 0);
  for (std::size_t i = 0; i < cfg.frames; ++i) {
    if (i < majority_frames) {
      v.objects[order[i]] = v.majority_object;
    } else {
      std::size_t o = rng.integer(cfg.num_objects - 1);
      if (o >= v.majority_object) ++o;
      v.objects[order[i]] = o;
    }
  }

  // Motifs: opening segment, then bursts of the act motif separated by
  // background gaps, then the closing segment.
  v.repetitions =
      cfg.count_min + static_cast<int>(rng.integer(cfg.count_max - cfg.count_min + 1));
  const std::size_t r = static_cast<std::size_t>(v.repetitions);
  const std::size_t middle = cfg.frames - cfg.opening_len - cfg.closing_len;
  std::vector<std::size_t> gaps(r + 1, 4);  // bursts stay separated
  std::size_t extra = middle - r * cfg.burst_len - 4 * (r + 1);
  while (extra > 0) {
    gaps[rng.integer(gaps.size())] += 1;
    --extra;
  }
  v.motifs.assign(cfg.frames, v.background_motif);
  std::size_t t = 0;
  for (; t < cfg.opening_len; ++t) v.motifs[t] = v.opening_motif;
  for (std::size_t burst = 0; burst < r; ++burst) {
    t += gaps[burst];
    for (std::size_t j = 0; j < cfg.burst_len; ++j) v.motifs[t++] = v.act_motif;
  }
  for (std::size_t j = cfg.frames - cfg.closing_len; j < cfg.frames; ++j)
    v.motifs[j] = v.closing_motif;
  return v;
}

}  // namespace detail

// Class-embedding matrices; deterministic in the seed, row scale ~1.
inline std::pair<std::vector<double>, std::vector<double>> make_class_embeddings(
    const SyntheticConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, 0xE1B));
  std::vector<double> e_app(cfg.num_objects * cfg.app_dim);
  std::vector<double> e_mot(cfg.num_motifs * cfg.mot_dim);
  const double app_scale = 1.0 / std::sqrt(static_cast<double>(cfg.app_dim));
  const double mot_scale = cfg.motion_gain / std::sqrt(static_cast<double>(cfg.mot_dim));
  for (double& v : e_app) v = rng.normal(0.0, app_scale);
  for (double& v : e_mot) v = rng.normal(0.0, mot_scale);
  return {std::move(e_app), std::move(e_mot)};
}

inline std::vector<std::string> question_words(const std::string& kind) {
  if (kind == "frameqa_attr") return {"which", "object", "appears", "most"};
  if (kind == "action") return {"what", "is", "the", "main", "action"};
  if (kind == "burst") return {"which", "action", "repeats", "briefly"};
  if (kind == "count") return {"how", "many", "times", "does", "the", "action", "repeat"};
  if (kind == "transition") return {"what", "changes", "from", "start", "to", "end"};
  throw ContractError("unknown question kind '" + kind + "'");
}

inline std::string object_token(std::size_t id) { return "obj" + std::to_string(id); }
inline std::string motif_token(std::size_t id) { return "mot" + std::to_string(id); }

// Writes features.bin, vocab.json, meta.json, {split}.jsonl (one record
// per video and standard task) and mixed_{split}.jsonl (one combined-cue
// open-ended record per video). Deterministic in cfg.seed.
inline void generate_synthetic(const SyntheticConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);

  auto [e_app, e_mot] = make_class_embeddings(cfg);

  Vocab vocab;
  for (const char* kind : {"frameqa_attr", "action", "burst", "count", "transition"})
    for (const auto& w : question_words(kind)) vocab.add(w);
  vocab.add("from");
  vocab.add("to");
  for (std::size_t i = 0; i < cfg.num_objects; ++i) vocab.add(object_token(i));
  for (std::size_t i = 0; i < cfg.num_motifs; ++i) vocab.add(motif_token(i));
  write_vocab(out_dir + "/vocab.json", vocab);

  DatasetMeta meta;
  meta.frames = cfg.frames;
  meta.app_dim = cfg.app_dim;
  meta.mot_dim = cfg.mot_dim;
  meta.num_candidates = cfg.num_candidates;
  meta.count_min = cfg.count_min;
  meta.count_max = cfg.count_max;
  meta.sigma = cfg.sigma;
  meta.seed = cfg.seed;
  for (std::size_t i = 0; i < cfg.num_objects; ++i) meta.object_classes.push_back(object_token(i));
  for (std::size_t i = 0; i < cfg.num_motifs; ++i) meta.motif_classes.push_back(motif_token(i));
  write_meta(out_dir + "/meta.json", meta);

  FeatureWriter features(out_dir + "/features.bin");

  const char* split_names[3] = {"train", "val", "test"};
  const std::size_t split_sizes[3] = {cfg.train_videos, cfg.val_videos, cfg.test_videos};
  for (int split = 0; split < 3; ++split) {
    Rng rng(derive_seed(cfg.seed, 0x5EED + static_cast<std::uint64_t>(split)));
    detail::BalancedPicker object_picker(cfg.num_objects, rng);
    detail::BalancedPicker motif_picker(cfg.num_motifs, rng);
    detail::BalancedPicker mixed_kind_picker(3, rng);
    std::vector<QARecord> records;
    std::vector<QARecord> mixed_records;

    for (std::size_t vid = 0; vid < split_sizes[split]; ++vid) {
      const std::string video_id =
          std::string(split_names[split]).substr(0, 2) + std::to_string(vid);
      const auto latents =
          detail::make_video_latents(cfg, rng, object_picker.next(), motif_picker.next());

      FeatureRecord feat;
      feat.video_id = video_id;
      feat.frames = cfg.frames;
      feat.app_dim = cfg.app_dim;
      feat.mot_dim = cfg.mot_dim;
      feat.appearance.resize(cfg.frames * cfg.app_dim);
      feat.motion.resize(cfg.frames * cfg.mot_dim);
      for (std::size_t t = 0; t < cfg.frames; ++t) {
        const double* app_row = e_app.data() + latents.objects[t] * cfg.app_dim;
        const double* mot_row = e_mot.data() + latents.motifs[t] * cfg.mot_dim;
        for (std::size_t j = 0; j < cfg.app_dim; ++j)
          feat.appearance[t * cfg.app_dim + j] =
              app_row[j] + (cfg.sigma > 0 ? rng.normal(0.0, cfg.sigma) : 0.0);
        for (std::size_t j = 0; j < cfg.mot_dim; ++j)
          feat.motion[t * cfg.mot_dim + j] =
              mot_row[j] + (cfg.sigma > 0 ? rng.normal(0.0, cfg.sigma) : 0.0);
      }
      features.write(feat);

      QARecord frameqa{video_id, "frameqa_attr", question_words("frameqa_attr"),
                       static_cast<int>(latents.majority_object), {}};
      QARecord action{video_id, "action", question_words("action"),
                      static_cast<int>(latents.background_motif), {}};
      QARecord count{video_id, "count", question_words("count"), latents.repetitions, {}};

      QARecord transition{video_id, "transition", question_words("transition"), 0, {}};
      {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        pairs.emplace_back(latents.opening_motif, latents.closing_motif);
        while (pairs.size() < cfg.num_candidates) {
          std::size_t b = rng.integer(cfg.num_motifs);
          std::size_t a = rng.integer(cfg.num_motifs);
          // Half the distractors keep the true opening motif, so the
          // closing segment has to be looked at.
          if (pairs.size() % 2 == 1) b = latents.opening_motif;
          if (a == b) continue;
          bool dup = false;
          for (const auto& p : pairs) dup = dup || p == std::make_pair(b, a);
          if (!dup) pairs.emplace_back(b, a);
        }
        const std::size_t correct = rng.integer(cfg.num_candidates);
        std::swap(pairs[0], pairs[correct]);
        transition.answer = static_cast<int>(correct);
        for (const auto& [b, a] : pairs)
          transition.candidates.push_back({"from", motif_token(b), "to", motif_token(a)});
      }

      records.push_back(frameqa);
      records.push_back(action);
      records.push_back(transition);
      records.push_back(count);

      // Combined-cue record: the question picks which granularity the
      // answer lives at; classes are objects followed by motifs.
      QARecord mixed;
      mixed.video_id = video_id;
      mixed.task = "mixed";
      const std::size_t kind = mixed_kind_picker.next();
      if (kind == 0) {
        mixed.question = question_words("frameqa_attr");
        mixed.answer = static_cast<int>(latents.majority_object);
      } else if (kind == 1) {
        mixed.question = question_words("action");
        mixed.answer = static_cast<int>(cfg.num_objects + latents.background_motif);
      } else {
        mixed.question = question_words("burst");
        mixed.answer = static_cast<int>(cfg.num_objects + latents.act_motif);
      }
      mixed_records.push_back(mixed);
    }

    write_qa_records(out_dir + "/" + split_names[split] + ".jsonl", records);
    write_qa_records(out_dir + "/mixed_" + split_names[split] + ".jsonl", mixed_records);
  }
}

namespace detail {

// Solves A x = b in place by Gaussian elimination with partial pivoting.
inline std::vector<double> solve_linear(std::vector<std::vector<double>> a,
                                        std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t r = n; r-- > 0;) {
    double acc = b[r];
    for (std::size_t c = r + 1; c < n; ++c) acc -= a[r][c] * x[c];
    x[r] = acc / a[r][r];
  }
  return x;
}

}  // namespace detail

// Closed-form check that the frame-level task is solvable from the
// features: a least-squares linear probe recovers per-class frequencies
// from the mean appearance row (mean = sum_c freq_c E_app[c] + noise) and
// predicts the argmax. At sigma = 0 the recovery is exact, so the probe
// must score 100%.
inline double frameqa_probe_accuracy(const std::string& dir, const std::string& split) {
  const DatasetMeta meta = read_meta(dir + "/meta.json");
  SyntheticConfig cfg;
  cfg.seed = meta.seed;
  cfg.num_objects = meta.object_classes.size();
  cfg.num_motifs = meta.motif_classes.size();
  cfg.app_dim = meta.app_dim;
  cfg.mot_dim = meta.mot_dim;
  auto [e_app, e_mot] = make_class_embeddings(cfg);

  std::unordered_map<std::string, int> labels;
  for (const QARecord& r : read_qa_records(dir + "/" + split + ".jsonl"))
    if (r.task == "frameqa_attr") labels[r.video_id] = r.answer;

  // Gram matrix of the class embeddings, fixed across videos.
  const std::size_t O = cfg.num_objects, D = cfg.app_dim;
  std::vector<std::vector<double>> gram(O, std::vector<double>(O, 0.0));
  for (std::size_t a = 0; a < O; ++a)
    for (std::size_t b = 0; b < O; ++b)
      for (std::size_t j = 0; j < D; ++j) gram[a][b] += e_app[a * D + j] * e_app[b * D + j];

  std::size_t correct = 0, total = 0;
  FeatureReader reader(dir + "/features.bin");
  while (auto rec = reader.next()) {
    auto it = labels.find(rec->video_id);
    if (it == labels.end()) continue;
    std::vector<double> mean(D, 0.0);
    for (std::size_t t = 0; t < rec->frames; ++t)
      for (std::size_t j = 0; j < D; ++j) mean[j] += rec->appearance[t * D + j];
    for (double& v : mean) v /= static_cast<double>(rec->frames);
    std::vector<double> rhs(O, 0.0);
    for (std::size_t c = 0; c < O; ++c)
      for (std::size_t j = 0; j < D; ++j) rhs[c] += mean[j] * e_app[c * D + j];
    const std::vector<double> freq = detail::solve_linear(gram, rhs);
    std::size_t best = 0;
    for (std::size_t c = 1; c < O; ++c)
      if (freq[c] > freq[best]) best = c;
    correct += (static_cast<int>(best) == it->second) ? 1 : 0;
    ++total;
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace mhn
