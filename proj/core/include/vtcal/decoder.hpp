#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vtcal/hooks.hpp"
#include "vtcal/kv_file.hpp"
#include "vtcal/numeric.hpp"
#include "vtcal/vision_tokens.hpp"

namespace vtcal {

// Reserved token ids. Object-name tokens occupy [kObjectBase, kObjectBase + objects).
namespace token {
inline constexpr int kPad = 0;
inline constexpr int kEnd = 1;
inline constexpr int kBos = 2;
inline constexpr int kAsk = 3;
inline constexpr int kYes = 4;
inline constexpr int kNo = 5;
inline constexpr int kObjectBase = 16;
inline constexpr int object(int id) { return kObjectBase + id; }
}  // namespace token

/// Knobs of the seeded initialization. The toy model is never trained; these
/// scales set how strongly the constructed grounding circuit shows through the
/// random weights.
struct InitScales {
  double text_flag = 4.0;        // norm of the direction shared by all text embeddings
  double text_noise = 0.3;       // per-component std of token-specific embedding noise
  double object_align = 10.0;    // weight of the rotated visual prototype in object-name embeddings
  double position = 0.25;        // amplitude of the sinusoidal position code
  double attn_temperature = 1.0;
  double ground_temperature = 16.0;  // sharpness of the last layer's name-to-patch lookup
  double ground_out = 8.0;           // output scale of that lookup
  double attn_noise = 0.15;      // Gaussian perturbation of the query/key maps
  double attn_out = 0.25;
  double ffn = 0.3;
  double detector_gain = 24.0;
  double detector_threshold = 0.45;
  double detector_text_gate = 0.0;
  double detector_vision_gate = 0.0;
  double detector_name_gate = 1.0;  // detector o also needs object o's name at the position
  double readout_detector = 3.0;
  double readout_text = 0.0;
  double readout_vision = 0.0;
  double unembed = 1.0;
};

struct DecoderConfig {
  int num_layers = 8;
  int hidden_dim = 64;
  int num_heads = 4;
  int vocab_size = 256;
  int max_seq = 512;
  int ffn_multiplier = 4;
  int end_token = token::kEnd;
  double prior_bias_strength = 0.0;  // beta
  std::uint64_t seed = 1234;
  InitScales init;

  // Throws ConfigError on inconsistent shapes.
  void validate() const;
  int head_dim() const { return hidden_dim / num_heads; }

  void write(KeyValueFile& kv, std::string_view prefix = "decoder.") const;
  void read(const KeyValueFile& kv, std::string_view prefix = "decoder.");
  static bool is_key(std::string_view key, std::string_view prefix = "decoder.");
};

/// Ties the language side to a vision encoder: object-name embeddings are
/// aligned with the encoder's token for a patch covered by that object, the
/// way a trained projector aligns image and word spaces.
struct VisualAlignment {
  std::vector<Vec> object_prototypes;  // token of a fully covered patch, per object id
  Vec vision_bias;                     // encoder bias shared by every vision token
};

struct LayerWeights {
  Matrix wq, wk, wv, wo;  // d x d, applied as W x
  Matrix w_in;            // (m*d) x d
  Vec b_in;
  Matrix w_out;           // d x (m*d)
};

class DecoderModel {
 public:
  // Seeded construction; deterministic in (config, alignment).
  static DecoderModel build(const DecoderConfig& config, const VisualAlignment& alignment = {});

  const DecoderConfig& config() const { return config_; }
  const LayerWeights& layer(int index1) const { return layers_.at(static_cast<std::size_t>(index1 - 1)); }
  const Matrix& embedding() const { return embedding_; }
  const Matrix& unembedding() const { return unembedding_; }
  const Vec& prior_bias() const { return prior_bias_; }

  // Same weights, different prior-bias strength.
  DecoderModel with_prior_bias(double beta) const;

  Vec embed_token(int id) const;
  // Sinusoidal code added to every input row (vision and text).
  void add_position(std::span<double> row, std::size_t position) const;

  // Binary format: "VTCALMDL", u32 version, u64 header length, key=value
  // header (config), then every tensor as little-endian float64 in a fixed
  // order. Round trips are bit-exact.
  void save(const std::filesystem::path& path) const;
  static DecoderModel load(const std::filesystem::path& path);

  friend bool operator==(const DecoderModel& a, const DecoderModel& b);

 private:
  // Every tensor in file order.
  std::vector<std::span<const double>> tensors() const;
  std::vector<std::span<double>> mutable_tensors();

  DecoderConfig config_;
  std::vector<LayerWeights> layers_;
  Matrix embedding_;    // vocab x d
  Matrix unembedding_;  // vocab x d
  Vec prior_bias_;      // vocab
};

struct LayerCache {
  std::vector<double> keys;
  std::vector<double> values;
};

/// Decoding state for one stream: X_context = [V; embed(Q)], the generated
/// tokens, and the per-layer key/value cache.
class DecodeState {
 public:
  DecodeState(const DecoderModel& model, const VisionTokens& vision, std::span<const int> query);

  std::size_t prefix_length() const { return prefix_length_; }
  std::size_t vision_count() const { return vision_count_; }
  std::size_t step() const { return tokens_.size(); }
  std::size_t sequence_length() const { return prefix_length_ + tokens_.size(); }
  std::size_t cached_rows() const { return cached_rows_; }
  const std::vector<int>& generated() const { return tokens_; }
  const std::vector<int>& query() const { return query_; }
  const Matrix& context() const { return context_; }

  // Appends a generated (or teacher-forced) token; it enters at step()+1.
  void append(int token);

  // Input row (embedding + position) for any position in the sequence.
  Matrix input_rows(const DecoderModel& model, std::size_t first, std::size_t count) const;

 private:
  friend Vec next_token_logits_cached(const DecoderModel&, DecodeState&, const HookSet&,
                                      const AttentionObserver*);

  Matrix context_;
  std::vector<int> query_;
  std::vector<int> tokens_;
  std::size_t prefix_length_ = 0;
  std::size_t vision_count_ = 0;
  int max_seq_ = 0;
  std::vector<LayerCache> cache_;
  std::size_t cached_rows_ = 0;
  Vec last_hidden_;
};

enum class DecodePath { cached, recompute };

/// H^(layer) for every position at the state's current step, recomputed from
/// scratch. Hooks run after each layer in ascending order.
Matrix forward_to_layer(const DecoderModel& model, const DecodeState& state, int layer,
                        const HookSet& hooks = {}, const AttentionObserver* observer = nullptr);

/// H^(1..up_to) for every position, recomputed.
std::vector<Matrix> forward_layers(const DecoderModel& model, const DecodeState& state, int up_to,
                                   const HookSet& hooks = {},
                                   const AttentionObserver* observer = nullptr);

/// Logits at the final position: W_U rms(H^(L)) + beta * prior_bias.
Vec next_token_logits(const DecoderModel& model, DecodeState& state, const HookSet& hooks = {},
                      DecodePath path = DecodePath::cached,
                      const AttentionObserver* observer = nullptr);

Vec next_token_logits_cached(const DecoderModel& model, DecodeState& state, const HookSet& hooks,
                             const AttentionObserver* observer);

// Lowest index among the maxima.
int argmax(std::span<const double> values);

struct GreedyOptions {
  DecodePath path = DecodePath::cached;
  bool stop_at_end = true;
  const AttentionObserver* observer = nullptr;
};

std::vector<int> greedy_decode(const DecoderModel& model, const VisionTokens& vision,
                               std::span<const int> query, const HookSet& hooks, int max_new,
                               const GreedyOptions& options = {});

// Continues greedy decoding from an existing state.
std::vector<int> greedy_continue(const DecoderModel& model, DecodeState& state,
                                 const HookSet& hooks, int max_new,
                                 const GreedyOptions& options = {});

double rms(std::span<const double> row);

}  // namespace vtcal
