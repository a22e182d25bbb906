#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "mhn/errors.hpp"
#include "mhn/fused.hpp"
#include "mhn/params.hpp"
#include "mhn/tensor.hpp"

namespace mhn {

// Token table with reserved padding (0) and unknown (1) ids. Unknown
// tokens map to the unknown id rather than erroring.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocab() {
    add("<pad>");
    add("<unk>");
  }

  std::size_t add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const std::size_t id = tokens_.size();
    ids_[token] = id;
    tokens_.push_back(token);
    return id;
  }

  std::size_t lookup(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(lookup(t));
    return ids;
  }

  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
    return j;
  }

  static Vocab from_json(const nlohmann::json& j) {
    Vocab v;
    std::vector<std::string> by_id(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::size_t id = it.value().get<std::size_t>();
      if (id >= by_id.size()) by_id.resize(id + 1);
      by_id[id] = it.key();
    }
    v.tokens_.clear();
    v.ids_.clear();
    for (std::size_t i = 0; i < by_id.size(); ++i) {
      v.ids_[by_id[i]] = i;
      v.tokens_.push_back(by_id[i]);
    }
    return v;
  }

 private:
  std::unordered_map<std::string, std::size_t> ids_;
  std::vector<std::string> tokens_;
};

struct LstmDirParams {
  Tensor wx;  // [in, 4h]
  Tensor wh;  // [h, 4h]
  Tensor b;   // [4h]
};

// Learned embedding table -> linear map to model width -> single-layer
// BiLSTM with per-direction hidden size d/2. One instance encodes both
// questions and answer candidates.
struct TextEncoderParams {
  Tensor embedding;  // [vocab, embed_dim]
  LinearParams input_proj;
  LstmDirParams fw;
  LstmDirParams bw;
  std::size_t hidden = 0;  // d/2
};

// ids -> [L, d] contextual rows; row j concatenates the forward and
// backward hidden states at step j.
inline Tensor encode_text(const std::vector<std::size_t>& ids, const TextEncoderParams& p) {
  if (ids.empty()) throw ContractError("encode_text: empty token sequence");
  Tensor embedded = gather_rows(p.embedding, ids);
  Tensor projected = linear(embedded, p.input_proj);
  Tensor fw = lstm_sequence(projected, p.fw.wx, p.fw.wh, p.fw.b, p.hidden, false);
  Tensor bw = lstm_sequence(projected, p.bw.wx, p.bw.wh, p.bw.b, p.hidden, true);
  return concat_cols({fw, bw});
}

}  // namespace mhn
