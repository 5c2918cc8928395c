#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kdcot/tensor.hpp"
#include "kdcot/tokenizer.hpp"

namespace kdcot {

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 64;
    int d_ff = 128;
    int vocab_size = 0;
    int max_seq_len = 512;
    std::string pos_encoding = "learned";

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& json_text);
};

struct LoraConfig {
    int rank = 32;
    double alpha = 32.0;
    double dropout = 0.1;
    // Parameter-path suffixes the adapters attach to.
    std::vector<std::string> target_patterns = {"attn/wq", "attn/wk", "attn/wv", "attn/wo"};

    std::string to_json() const;
    static LoraConfig from_json(const std::string& json_text);
};

struct Param {
    TensorData<float> tensor;
    bool trainable = true;
};

// Decoder-only pre-LN transformer. Parameters are keyed by hierarchical path
// ("layers/0/attn/wq"); LoRA adapters live under "<target>/lora_a" (r x d_in,
// stored transposed as [d_in, r]) and "<target>/lora_b" ([r, d_out], zero at
// init). Linear layers apply y = x * W with W shaped [d_in, d_out].
class Model {
public:
    ModelConfig config;
    std::map<std::string, Param> params;
    std::optional<LoraConfig> lora;
    uint64_t tokenizer_hash = 0;

    bool has_param(const std::string& path) const { return params.count(path) != 0; }
    const TensorData<float>& param(const std::string& path) const;

    int64_t total_parameter_count() const;
    int64_t trainable_parameter_count() const;
    uint64_t parameter_hash() const;

    std::vector<std::string> trainable_paths() const;
    void freeze_all();
};

// Seeded scaled-normal initialization (std 0.02, residual projections scaled
// by 1/sqrt(2*n_layers)).
Model build_model(const ModelConfig& config, uint64_t seed, uint64_t tokenizer_hash = 0);

// Closed-form total parameter count for a config (no adapters).
int64_t parameter_count_formula(const ModelConfig& config);

// Freezes base parameters and attaches trainable rank-decomposition matrices
// to every matched target.
Model inject_lora(const Model& base, const LoraConfig& lora, uint64_t seed);

// ---- tape forward (training / gradient checking) -------------------------

template <typename T>
struct TapeParams {
    std::map<std::string, typename Tape<T>::NodeId> ids;
};

// Registers every parameter as a tape leaf (requires_grad per trainable flag,
// or none when `trainable_enabled` is false, e.g. for the teacher).
template <typename T>
TapeParams<T> register_params(Tape<T>& tape, const Model& model, bool trainable_enabled);

// Full causal forward; returns the [T x N] logits node. `dropout_rng` enables
// LoRA dropout (training only); pass nullptr for deterministic inference.
template <typename T>
typename Tape<T>::NodeId forward_logits_on_tape(Tape<T>& tape, const TapeParams<T>& params,
                                                const ModelConfig& config,
                                                const std::optional<LoraConfig>& lora,
                                                const std::vector<int>& token_ids,
                                                Rng* dropout_rng);

// ---- inference ------------------------------------------------------------

// Incremental decoding with per-layer KV caches. Feeding a block of tokens
// extends the cache and returns logits for the fed positions.
class InferenceSession {
public:
    explicit InferenceSession(const Model& model);

    // Logits rows for the fed positions ([len(ids) x N]).
    TensorData<float> feed(const std::vector<int>& ids);
    // Convenience: logits of the final fed position.
    std::vector<float> feed_last(const std::vector<int>& ids);

    int position() const { return pos_; }

private:
    const Model& model_;
    int pos_ = 0;
    // Per layer, row-major [pos, d_model] key/value history.
    std::vector<std::vector<float>> k_cache_;
    std::vector<std::vector<float>> v_cache_;
};

// Next-token logits for every prefix of `token_ids` (row t conditions on
// ids 0..t).
TensorData<float> forward_logits(const Model& model, const std::vector<int>& token_ids);

struct DecodeParams {
    double temperature = 0.2;
    int max_new_tokens = 64;
    std::vector<std::vector<int>> stop_sequences;  // token-id sequences, matched over new tokens
    uint64_t seed = 0;
};

// Autoregressive sampling from softmax(logits / temperature); temperature 0
// is argmax with lowest-id tie-break. Stops at eos, any stop sequence
// (excluded from the output), max_new_tokens, or the context limit.
std::vector<int> generate(const Model& model, const std::vector<int>& prompt_ids,
                          const DecodeParams& decode);

// ---- persistence ----------------------------------------------------------

// Checkpoint directory layout: manifest.json plus one raw little-endian
// float32 file per parameter path (path with '/' replaced by "__", suffix
// ".bin").
void save_model(const std::string& dir, const Model& model, const std::string& extra_manifest_json = "{}");
Model load_model(const std::string& dir);

}  // namespace kdcot
