#include "kdcot/model.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace kdcot {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- configs ---------------------------------------------------------------

void ModelConfig::validate() const {
    if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_ff <= 0 || vocab_size <= 0 ||
        max_seq_len <= 0)
        throw ValidationError("ModelConfig: all sizes must be positive");
    if (d_model % n_heads != 0)
        throw ValidationError("ModelConfig: d_model (" + std::to_string(d_model) +
                              ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (pos_encoding != "learned")
        throw ValidationError("ModelConfig: unsupported positional encoding '" + pos_encoding + "'");
}

std::string ModelConfig::to_json() const {
    json j{{"n_layers", n_layers},   {"n_heads", n_heads},
           {"d_model", d_model},     {"d_ff", d_ff},
           {"vocab_size", vocab_size}, {"max_seq_len", max_seq_len},
           {"pos_encoding", pos_encoding}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelConfig c;
    c.n_layers = j.at("n_layers");
    c.n_heads = j.at("n_heads");
    c.d_model = j.at("d_model");
    c.d_ff = j.at("d_ff");
    c.vocab_size = j.at("vocab_size");
    c.max_seq_len = j.at("max_seq_len");
    c.pos_encoding = j.value("pos_encoding", "learned");
    return c;
}

std::string LoraConfig::to_json() const {
    json j{{"rank", rank}, {"alpha", alpha}, {"dropout", dropout}, {"target_patterns", target_patterns}};
    return j.dump();
}

LoraConfig LoraConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    LoraConfig c;
    c.rank = j.at("rank");
    c.alpha = j.at("alpha");
    c.dropout = j.at("dropout");
    c.target_patterns = j.at("target_patterns").get<std::vector<std::string>>();
    return c;
}

// ---- model -----------------------------------------------------------------

const TensorData<float>& Model::param(const std::string& path) const {
    auto it = params.find(path);
    if (it == params.end()) throw ValidationError("unknown parameter path '" + path + "'");
    return it->second.tensor;
}

int64_t Model::total_parameter_count() const {
    int64_t n = 0;
    for (const auto& [_, p] : params) n += p.tensor.numel();
    return n;
}

int64_t Model::trainable_parameter_count() const {
    int64_t n = 0;
    for (const auto& [_, p] : params)
        if (p.trainable) n += p.tensor.numel();
    return n;
}

uint64_t Model::parameter_hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [name, p] : params) {
        h = fnv1a(name, h);
        h = fnv1a(p.tensor.data.data(), p.tensor.data.size() * sizeof(float), h);
    }
    return h;
}

std::vector<std::string> Model::trainable_paths() const {
    std::vector<std::string> out;
    for (const auto& [name, p] : params)
        if (p.trainable) out.push_back(name);
    return out;
}

void Model::freeze_all() {
    for (auto& [_, p] : params) p.trainable = false;
}

int64_t parameter_count_formula(const ModelConfig& c) {
    const int64_t d = c.d_model, ff = c.d_ff, N = c.vocab_size;
    const int64_t per_layer = 4 * d * d + 2 * d * ff + 4 * d;  // qkvo + ff + two ln pairs
    return N * d + int64_t(c.max_seq_len) * d + int64_t(c.n_layers) * per_layer + 2 * d + d * N;
}

namespace {

TensorData<float> seeded_normal(Rng& rng, Shape shape, double std_dev) {
    auto t = TensorData<float>::zeros(std::move(shape));
    for (auto& x : t.data) x = static_cast<float>(rng.normal() * std_dev);
    return t;
}

std::string layer_prefix(int i) { return "layers/" + std::to_string(i) + "/"; }

bool path_matches_target(const std::string& path, const std::string& pattern) {
    return path.size() >= pattern.size() &&
           path.compare(path.size() - pattern.size(), pattern.size(), pattern) == 0;
}

}  // namespace

Model build_model(const ModelConfig& config, uint64_t seed, uint64_t tokenizer_hash) {
    config.validate();
    Model m;
    m.config = config;
    m.tokenizer_hash = tokenizer_hash;
    Rng rng(seed);
    const int64_t d = config.d_model, ff = config.d_ff, N = config.vocab_size;
    const double std_dev = 0.02;
    const double resid_std = std_dev / std::sqrt(2.0 * config.n_layers);

    m.params["tok_emb"] = {seeded_normal(rng, {N, d}, std_dev), true};
    m.params["pos_emb"] = {seeded_normal(rng, {config.max_seq_len, d}, std_dev), true};
    for (int i = 0; i < config.n_layers; ++i) {
        const std::string p = layer_prefix(i);
        m.params[p + "ln1/gamma"] = {TensorData<float>::full({d}, 1.0f), true};
        m.params[p + "ln1/beta"] = {TensorData<float>::zeros({d}), true};
        m.params[p + "attn/wq"] = {seeded_normal(rng, {d, d}, std_dev), true};
        m.params[p + "attn/wk"] = {seeded_normal(rng, {d, d}, std_dev), true};
        m.params[p + "attn/wv"] = {seeded_normal(rng, {d, d}, std_dev), true};
        m.params[p + "attn/wo"] = {seeded_normal(rng, {d, d}, resid_std), true};
        m.params[p + "ln2/gamma"] = {TensorData<float>::full({d}, 1.0f), true};
        m.params[p + "ln2/beta"] = {TensorData<float>::zeros({d}), true};
        m.params[p + "ff/w1"] = {seeded_normal(rng, {d, ff}, std_dev), true};
        m.params[p + "ff/w2"] = {seeded_normal(rng, {ff, d}, resid_std), true};
    }
    m.params["final_ln/gamma"] = {TensorData<float>::full({d}, 1.0f), true};
    m.params["final_ln/beta"] = {TensorData<float>::zeros({d}), true};
    m.params["lm_head"] = {seeded_normal(rng, {d, N}, std_dev), true};
    return m;
}

Model inject_lora(const Model& base, const LoraConfig& lora, uint64_t seed) {
    if (lora.rank <= 0) throw ValidationError("inject_lora: rank must be positive");
    Model m = base;
    m.lora = lora;
    m.freeze_all();
    Rng rng(seed);
    size_t matched = 0;
    for (const auto& [path, p] : base.params) {
        bool is_target = false;
        for (const auto& pat : lora.target_patterns)
            if (path_matches_target(path, pat)) is_target = true;
        if (!is_target) continue;
        if (p.tensor.shape.size() != 2)
            throw ValidationError("inject_lora: target '" + path + "' is not a matrix");
        const int64_t d_in = p.tensor.shape[0], d_out = p.tensor.shape[1];
        if (lora.rank > std::min(d_in, d_out))
            throw ValidationError("inject_lora: rank " + std::to_string(lora.rank) +
                                  " exceeds min(d_in, d_out) of '" + path + "'");
        m.params[path + "/lora_a"] = {seeded_normal(rng, {d_in, lora.rank}, 0.02), true};
        m.params[path + "/lora_b"] = {TensorData<float>::zeros({lora.rank, d_out}), true};
        ++matched;
    }
    if (matched == 0) throw ValidationError("inject_lora: no parameter path matches the targets");
    return m;
}

// ---- tape forward ----------------------------------------------------------

template <typename T>
TapeParams<T> register_params(Tape<T>& tape, const Model& model, bool trainable_enabled) {
    TapeParams<T> out;
    for (const auto& [name, p] : model.params) {
        const bool rg = trainable_enabled && p.trainable;
        if constexpr (std::is_same_v<T, float>) {
            out.ids[name] = tape.leaf(p.tensor, rg);
        } else {
            out.ids[name] = tape.leaf(p.tensor.template cast<T>(), rg);
        }
    }
    return out;
}

namespace {

template <typename T>
typename Tape<T>::NodeId linear_with_lora(Tape<T>& tape, const TapeParams<T>& P,
                                          typename Tape<T>::NodeId x, const std::string& w_path,
                                          const std::optional<LoraConfig>& lora, Rng* dropout_rng) {
    auto y = tape.matmul(x, P.ids.at(w_path));
    auto a_it = P.ids.find(w_path + "/lora_a");
    if (lora && a_it != P.ids.end()) {
        auto xd = dropout_rng ? tape.dropout(x, lora->dropout, *dropout_rng) : x;
        auto low = tape.matmul(tape.matmul(xd, a_it->second), P.ids.at(w_path + "/lora_b"));
        y = tape.add(y, tape.scale(low, static_cast<T>(lora->alpha / lora->rank)));
    }
    return y;
}

template <typename T>
TensorData<T> causal_mask(int64_t t) {
    auto m = TensorData<T>::zeros({t, t});
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = i + 1; j < t; ++j) m.data[i * t + j] = T(-1e9);
    return m;
}

}  // namespace

template <typename T>
typename Tape<T>::NodeId forward_logits_on_tape(Tape<T>& tape, const TapeParams<T>& P,
                                                const ModelConfig& config,
                                                const std::optional<LoraConfig>& lora,
                                                const std::vector<int>& token_ids,
                                                Rng* dropout_rng) {
    const int64_t t = static_cast<int64_t>(token_ids.size());
    if (t == 0) throw ValidationError("forward: empty sequence");
    if (t > config.max_seq_len) throw ValidationError("forward: sequence exceeds max_seq_len");
    const int64_t d = config.d_model;
    const int heads = config.n_heads;
    const int64_t dh = d / heads;
    const T ln_eps = T(1e-5);

    std::vector<int> positions(static_cast<size_t>(t));
    for (int64_t i = 0; i < t; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(i);

    auto x = tape.add(tape.embedding(P.ids.at("tok_emb"), token_ids),
                      tape.embedding(P.ids.at("pos_emb"), positions));
    const auto mask = causal_mask<T>(t);

    for (int layer = 0; layer < config.n_layers; ++layer) {
        const std::string p = layer_prefix(layer);
        auto h = tape.layer_norm(x, P.ids.at(p + "ln1/gamma"), P.ids.at(p + "ln1/beta"), ln_eps);
        auto q = linear_with_lora(tape, P, h, p + "attn/wq", lora, dropout_rng);
        auto k = linear_with_lora(tape, P, h, p + "attn/wk", lora, dropout_rng);
        auto v = linear_with_lora(tape, P, h, p + "attn/wv", lora, dropout_rng);
        std::vector<typename Tape<T>::NodeId> head_outs;
        head_outs.reserve(static_cast<size_t>(heads));
        for (int hd = 0; hd < heads; ++hd) {
            auto qh = tape.col_slice(q, hd * dh, dh);
            auto kh = tape.col_slice(k, hd * dh, dh);
            auto vh = tape.col_slice(v, hd * dh, dh);
            auto scores = tape.scale(tape.matmul(qh, tape.transpose2d(kh)),
                                     static_cast<T>(1.0 / std::sqrt(double(dh))));
            auto probs = tape.softmax_rows(tape.add_const(scores, mask));
            head_outs.push_back(tape.matmul(probs, vh));
        }
        auto attn = tape.concat_cols(head_outs);
        x = tape.add(x, linear_with_lora(tape, P, attn, p + "attn/wo", lora, dropout_rng));
        auto h2 = tape.layer_norm(x, P.ids.at(p + "ln2/gamma"), P.ids.at(p + "ln2/beta"), ln_eps);
        auto f = tape.gelu(tape.matmul(h2, P.ids.at(p + "ff/w1")));
        x = tape.add(x, tape.matmul(f, P.ids.at(p + "ff/w2")));
    }
    auto h = tape.layer_norm(x, P.ids.at("final_ln/gamma"), P.ids.at("final_ln/beta"), ln_eps);
    return tape.matmul(h, P.ids.at("lm_head"));
}

template TapeParams<float> register_params<float>(Tape<float>&, const Model&, bool);
template TapeParams<double> register_params<double>(Tape<double>&, const Model&, bool);
template Tape<float>::NodeId forward_logits_on_tape<float>(Tape<float>&, const TapeParams<float>&,
                                                           const ModelConfig&,
                                                           const std::optional<LoraConfig>&,
                                                           const std::vector<int>&, Rng*);
template Tape<double>::NodeId forward_logits_on_tape<double>(
    Tape<double>&, const TapeParams<double>&, const ModelConfig&, const std::optional<LoraConfig>&,
    const std::vector<int>&, Rng*);

// ---- inference -------------------------------------------------------------

namespace {

using EMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// y = x * W (+ LoRA branch, dropout disabled at inference).
EMat linear_infer(const Model& m, const EMat& x, const std::string& w_path) {
    const auto& w = m.param(w_path);
    ConstMatMap<float> wm(w.data.data(), w.shape[0], w.shape[1]);
    EMat y = x * wm;
    auto it = m.params.find(w_path + "/lora_a");
    if (m.lora && it != m.params.end()) {
        const auto& a = it->second.tensor;
        const auto& b = m.param(w_path + "/lora_b");
        ConstMatMap<float> am(a.data.data(), a.shape[0], a.shape[1]);
        ConstMatMap<float> bm(b.data.data(), b.shape[0], b.shape[1]);
        y.noalias() += static_cast<float>(m.lora->alpha / m.lora->rank) * ((x * am) * bm);
    }
    return y;
}

EMat layer_norm_infer(const Model& m, const EMat& x, const std::string& prefix) {
    const auto& gamma = m.param(prefix + "gamma").data;
    const auto& beta = m.param(prefix + "beta").data;
    const float eps = 1e-5f;
    EMat out(x.rows(), x.cols());
    const auto n = x.cols();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        float mean = 0.f, var = 0.f;
        for (Eigen::Index j = 0; j < n; ++j) mean += x(i, j);
        mean /= float(n);
        for (Eigen::Index j = 0; j < n; ++j) {
            const float c = x(i, j) - mean;
            var += c * c;
        }
        var /= float(n);
        const float inv = 1.0f / std::sqrt(var + eps);
        for (Eigen::Index j = 0; j < n; ++j)
            out(i, j) = (x(i, j) - mean) * inv * gamma[size_t(j)] + beta[size_t(j)];
    }
    return out;
}

}  // namespace

InferenceSession::InferenceSession(const Model& model) : model_(model) {
    model_.config.validate();
    k_cache_.resize(static_cast<size_t>(model_.config.n_layers));
    v_cache_.resize(static_cast<size_t>(model_.config.n_layers));
}

TensorData<float> InferenceSession::feed(const std::vector<int>& ids) {
    const auto& cfg = model_.config;
    const int64_t b = static_cast<int64_t>(ids.size());
    if (b == 0) throw ValidationError("feed: empty block");
    if (pos_ + b > cfg.max_seq_len)
        throw RuntimeFailure("feed: context overflow (apply truncation upstream)");
    const int64_t d = cfg.d_model;
    const int heads = cfg.n_heads;
    const int64_t dh = d / heads;

    const auto& tok = model_.param("tok_emb");
    const auto& pos = model_.param("pos_emb");
    EMat x(b, d);
    for (int64_t i = 0; i < b; ++i) {
        const int id = ids[static_cast<size_t>(i)];
        if (id < 0 || id >= cfg.vocab_size) throw ValidationError("feed: token id out of range");
        for (int64_t j = 0; j < d; ++j)
            x(i, j) = tok.data[int64_t(id) * d + j] + pos.data[(pos_ + i) * d + j];
    }

    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const std::string p = layer_prefix(layer);
        EMat h = layer_norm_infer(model_, x, p + "ln1/");
        EMat q = linear_infer(model_, h, p + "attn/wq");
        EMat k = linear_infer(model_, h, p + "attn/wk");
        EMat v = linear_infer(model_, h, p + "attn/wv");

        auto& kc = k_cache_[static_cast<size_t>(layer)];
        auto& vc = v_cache_[static_cast<size_t>(layer)];
        const size_t old = kc.size();
        kc.resize(old + static_cast<size_t>(b * d));
        vc.resize(old + static_cast<size_t>(b * d));
        for (int64_t i = 0; i < b; ++i)
            for (int64_t j = 0; j < d; ++j) {
                kc[old + static_cast<size_t>(i * d + j)] = k(i, j);
                vc[old + static_cast<size_t>(i * d + j)] = v(i, j);
            }

        const float inv_sqrt = 1.0f / std::sqrt(float(dh));
        EMat attn(b, d);
        std::vector<float> scores;
        for (int64_t i = 0; i < b; ++i) {
            const int64_t ctx = pos_ + i + 1;  // causal: attend to positions <= current
            for (int hd = 0; hd < heads; ++hd) {
                scores.assign(static_cast<size_t>(ctx), 0.f);
                float mx = -std::numeric_limits<float>::infinity();
                for (int64_t s = 0; s < ctx; ++s) {
                    float dot = 0.f;
                    const float* krow = kc.data() + s * d + hd * dh;
                    for (int64_t j = 0; j < dh; ++j) dot += q(i, hd * dh + j) * krow[j];
                    dot *= inv_sqrt;
                    scores[static_cast<size_t>(s)] = dot;
                    mx = std::max(mx, dot);
                }
                float z = 0.f;
                for (auto& s : scores) {
                    s = std::exp(s - mx);
                    z += s;
                }
                for (int64_t j = 0; j < dh; ++j) {
                    float acc = 0.f;
                    for (int64_t s = 0; s < ctx; ++s)
                        acc += scores[static_cast<size_t>(s)] * vc[s * d + hd * dh + j];
                    attn(i, hd * dh + j) = acc / z;
                }
            }
        }
        x += linear_infer(model_, attn, p + "attn/wo");
        EMat h2 = layer_norm_infer(model_, x, p + "ln2/");
        EMat f = h2 * ConstMatMap<float>(model_.param(p + "ff/w1").data.data(), d, cfg.d_ff);
        for (Eigen::Index i = 0; i < f.size(); ++i) {
            const float u = 0.7978845608028654f *
                            (f.data()[i] + 0.044715f * f.data()[i] * f.data()[i] * f.data()[i]);
            f.data()[i] = 0.5f * f.data()[i] * (1.0f + std::tanh(u));
        }
        x += f * ConstMatMap<float>(model_.param(p + "ff/w2").data.data(), cfg.d_ff, d);
    }
    pos_ += static_cast<int>(b);

    EMat h = layer_norm_infer(model_, x, "final_ln/");
    EMat logits = h * ConstMatMap<float>(model_.param("lm_head").data.data(), d, cfg.vocab_size);
    TensorData<float> out = TensorData<float>::zeros({b, cfg.vocab_size});
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < cfg.vocab_size; ++j) out.data[i * cfg.vocab_size + j] = logits(i, j);
    for (float v : out.data)
        if (!std::isfinite(v)) throw RuntimeFailure("feed: non-finite logits");
    return out;
}

std::vector<float> InferenceSession::feed_last(const std::vector<int>& ids) {
    auto all = feed(ids);
    const int64_t n = all.shape[1];
    return std::vector<float>(all.data.end() - n, all.data.end());
}

TensorData<float> forward_logits(const Model& model, const std::vector<int>& token_ids) {
    // One token per feed so that row t is computed from exactly the prefix
    // 0..t; prefix logits then match shorter inputs bit for bit.
    InferenceSession session(model);
    TensorData<float> out =
        TensorData<float>::zeros({int64_t(token_ids.size()), model.config.vocab_size});
    for (size_t t = 0; t < token_ids.size(); ++t) {
        auto row = session.feed({token_ids[t]});
        std::copy(row.data.begin(), row.data.end(),
                  out.data.begin() + int64_t(t) * model.config.vocab_size);
    }
    return out;
}

std::vector<int> generate(const Model& model, const std::vector<int>& prompt_ids,
                          const DecodeParams& decode) {
    if (decode.temperature < 0) throw ValidationError("generate: temperature must be >= 0");
    if (static_cast<int>(prompt_ids.size()) >= model.config.max_seq_len)
        throw ValidationError("generate: prompt does not fit in the context window");
    InferenceSession session(model);
    Rng rng(decode.seed);
    std::vector<float> logits = session.feed_last(prompt_ids);
    std::vector<int> out;

    auto sample = [&](const std::vector<float>& l) -> int {
        if (decode.temperature == 0.0) {
            int best = 0;
            for (size_t i = 1; i < l.size(); ++i)
                if (l[i] > l[best]) best = static_cast<int>(i);  // lowest id wins ties
            return best;
        }
        double mx = -1e300;
        for (float v : l) mx = std::max(mx, double(v));
        std::vector<double> p(l.size());
        double z = 0.0;
        for (size_t i = 0; i < l.size(); ++i) {
            p[i] = std::exp((double(l[i]) - mx) / decode.temperature);
            z += p[i];
        }
        double r = rng.uniform() * z;
        for (size_t i = 0; i < p.size(); ++i) {
            r -= p[i];
            if (r <= 0.0) return static_cast<int>(i);
        }
        return static_cast<int>(p.size()) - 1;
    };

    auto ends_with = [](const std::vector<int>& v, const std::vector<int>& suffix) {
        return suffix.size() <= v.size() &&
               std::equal(suffix.rbegin(), suffix.rend(), v.rbegin());
    };

    for (int step = 0; step < decode.max_new_tokens; ++step) {
        const int next = sample(logits);
        if (next == TokenizerSpec::kEos) break;
        out.push_back(next);
        bool stopped = false;
        for (const auto& stop : decode.stop_sequences) {
            if (!stop.empty() && ends_with(out, stop)) {
                out.resize(out.size() - stop.size());
                stopped = true;
                break;
            }
        }
        if (stopped) break;
        if (session.position() >= model.config.max_seq_len) break;
        logits = session.feed_last({next});
    }
    return out;
}

// ---- persistence -----------------------------------------------------------

namespace {

std::string param_file_name(const std::string& path) {
    std::string out = path;
    size_t pos = 0;
    while ((pos = out.find('/', pos)) != std::string::npos) {
        out.replace(pos, 1, "__");
        pos += 2;
    }
    return out + ".bin";
}

}  // namespace

void save_model(const std::string& dir, const Model& model, const std::string& extra_manifest_json) {
    fs::create_directories(dir);
    json manifest = json::parse(extra_manifest_json);
    manifest["config"] = json::parse(model.config.to_json());
    manifest["tokenizer_hash"] = hash_to_hex(model.tokenizer_hash);
    if (model.lora) manifest["lora"] = json::parse(model.lora->to_json());
    json plist = json::array();
    for (const auto& [name, p] : model.params) {
        json entry{{"path", name},
                   {"shape", p.tensor.shape},
                   {"trainable", p.trainable},
                   {"file", param_file_name(name)}};
        plist.push_back(entry);
        std::ofstream f(fs::path(dir) / param_file_name(name), std::ios::binary);
        if (!f) throw RuntimeFailure("cannot write parameter file in " + dir);
        f.write(reinterpret_cast<const char*>(p.tensor.data.data()),
                static_cast<std::streamsize>(p.tensor.data.size() * sizeof(float)));
    }
    manifest["params"] = plist;
    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!mf) throw RuntimeFailure("cannot write manifest in " + dir);
    mf << manifest.dump(2);
}

Model load_model(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!mf) throw RuntimeFailure("cannot read manifest from " + dir);
    json manifest = json::parse(mf);
    Model m;
    m.config = ModelConfig::from_json(manifest.at("config").dump());
    m.tokenizer_hash = std::stoull(manifest.at("tokenizer_hash").get<std::string>(), nullptr, 16);
    if (manifest.contains("lora")) m.lora = LoraConfig::from_json(manifest["lora"].dump());
    for (const auto& entry : manifest.at("params")) {
        const std::string path = entry.at("path");
        Shape shape = entry.at("shape").get<Shape>();
        const int64_t n = shape_numel(shape);
        std::vector<float> data(static_cast<size_t>(n));
        std::ifstream f(fs::path(dir) / entry.at("file").get<std::string>(), std::ios::binary);
        if (!f) throw RuntimeFailure("missing parameter file for '" + path + "' in " + dir);
        f.read(reinterpret_cast<char*>(data.data()),
               static_cast<std::streamsize>(data.size() * sizeof(float)));
        if (f.gcount() != static_cast<std::streamsize>(data.size() * sizeof(float)))
            throw RuntimeFailure("truncated parameter file for '" + path + "'");
        m.params[path] = {TensorData<float>(std::move(shape), std::move(data)),
                          entry.value("trainable", true)};
    }
    return m;
}

}  // namespace kdcot
