#include "vla/model.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vla {

std::string head_type_name(HeadType h) {
    switch (h) {
        case HeadType::diffusion: return "diffusion";
        case HeadType::ar: return "ar";
        case HeadType::mlp: return "mlp";
    }
    throw std::logic_error("unreachable head type");
}

HeadType head_type_from_name(const std::string& s) {
    if (s == "diffusion") return HeadType::diffusion;
    if (s == "ar") return HeadType::ar;
    if (s == "mlp") return HeadType::mlp;
    throw std::invalid_argument("unknown head type " + s);
}

void ModelConfig::validate() const {
    backbone.validate();
    if (pooled_tokens < 1 || cond_width < 1 || horizon < 1 || denoiser_hidden < 1 ||
        mlp_hidden < 1 || diffusion_T < 1) {
        throw std::invalid_argument("model config: degenerate dimensions");
    }
    if (exec_horizon < 1 || exec_horizon > horizon) {
        throw std::invalid_argument("model config: exec_horizon outside [1,horizon]");
    }
    if (diffusion_K < 1 || diffusion_K > diffusion_T) {
        throw std::invalid_argument("model config: K outside [1,T]");
    }
    if (ar_bins < 2) throw std::invalid_argument("model config: ar_bins must be >= 2");
}

PolicyModel::PolicyModel(const ModelConfig& cfg, const Vocabulary& vocab) : cfg_(cfg) {
    cfg_.validate();
    backbone_ = std::make_unique<Backbone>(cfg_.backbone, vocab, cfg_.init_seed);
    int rank = cfg_.lora_rank;
    if (rank == 0) rank = select_lora_rank(cfg_.backbone, backbone_->base_params());
    backbone_->attach_lora(rank, cfg_.lora_alpha, cfg_.init_seed + 1);
    cfg_.lora_rank = rank;
    cond_ = std::make_unique<ConditioningNet>(cfg_.backbone.d_model, cfg_.pooled_tokens,
                                              cfg_.cond_width, cfg_.init_seed + 2);
    sched_ = NoiseSchedule::squared_cosine(cfg_.diffusion_T);
    switch (cfg_.head) {
        case HeadType::diffusion:
            denoiser_ = std::make_unique<DenoiserMlp>(cfg_.horizon, cfg_.cond_width,
                                                      cfg_.denoiser_hidden, cfg_.time_embed_dim,
                                                      cfg_.init_seed + 3);
            break;
        case HeadType::mlp:
            mlp_ = std::make_unique<MlpHead>(cfg_.cond_width, cfg_.horizon, cfg_.mlp_hidden,
                                             cfg_.init_seed + 3);
            break;
        case HeadType::ar:
            ar_ = std::make_unique<ArHead>(cfg_.backbone.d_model, cfg_.ar_bins,
                                           cfg_.horizon * kActionDim, cfg_.init_seed + 3);
            break;
    }
    action_stats.offset.assign(kActionDim, 0.0);
    action_stats.scale.assign(kActionDim, 1.0);
    proprio_stats = action_stats;
}

std::vector<TensorPtr> PolicyModel::head_parameters() const {
    auto out = cond_->trainable_parameters();
    std::vector<TensorPtr> extra;
    if (denoiser_) extra = denoiser_->trainable_parameters();
    if (mlp_) extra = mlp_->trainable_parameters();
    if (ar_) extra = ar_->trainable_parameters();
    out.insert(out.end(), extra.begin(), extra.end());
    return out;
}

std::vector<std::pair<std::string, TensorPtr>> PolicyModel::named_parameters() const {
    auto out = backbone_->named_parameters();
    auto append = [&](const std::vector<std::pair<std::string, TensorPtr>>& more) {
        out.insert(out.end(), more.begin(), more.end());
    };
    append(cond_->named_parameters());
    if (denoiser_) append(denoiser_->named_parameters());
    if (mlp_) append(mlp_->named_parameters());
    if (ar_) append(ar_->named_parameters());
    return out;
}

ParamCounts PolicyModel::count_parameters() const {
    ParamCounts c;
    c.total = backbone_->total_params();
    int64_t head = 0;
    for (const auto& t : head_parameters()) head += t->size();
    c.total += head;
    c.trainable = backbone_->lora_params() + head;
    return c;
}

TensorPtr PolicyModel::encode_observation(const Observation& obs) {
    auto ids = backbone_->vocab().encode(obs.instruction, cfg_.backbone.max_text_len);
    return backbone_->encode(obs.images, ids);
}

TensorPtr PolicyModel::condition_observation(const Observation& obs) {
    auto emb = encode_observation(obs);
    auto prop = stats_ready ? proprio_stats.normalize(obs.proprio) : obs.proprio;
    return cond_->forward(emb, prop);
}

std::vector<std::vector<double>> PolicyModel::predict_chunk(const Observation& obs,
                                                            uint64_t seed) {
    const int chunk = cfg_.horizon * kActionDim;
    std::vector<double> flat;
    if (cfg_.head == HeadType::ar) {
        auto ids = backbone_->vocab().encode(obs.instruction, cfg_.backbone.max_text_len);
        auto tokens = ar_->decode(*backbone_, obs.images, ids, cfg_.horizon);
        ActionTokenizer tok(cfg_.ar_bins);
        flat = tok.decode_all(tokens);
    } else {
        auto cond_vec = condition_observation(obs);
        if (cfg_.head == HeadType::mlp) {
            auto out = mlp_->forward(cond_vec);
            flat = out->data;
            for (auto& v : flat) v = std::clamp(v, -1.0, 1.0);
        } else {
            Rng rng(seed);
            NoisePredictor predict = [&](const std::vector<double>& a_t, int t) {
                auto a_t_tensor = Tensor::from_data({1, chunk}, a_t);
                return denoiser_->forward(a_t_tensor, t, cond_vec)->data;
            };
            flat = sample_actions(predict, chunk, sched_, cfg_.diffusion_K, rng);
        }
    }
    std::vector<std::vector<double>> actions(cfg_.horizon, std::vector<double>(kActionDim));
    for (int h = 0; h < cfg_.horizon; ++h) {
        std::vector<double> row(flat.begin() + h * kActionDim, flat.begin() + (h + 1) * kActionDim);
        actions[h] = stats_ready ? action_stats.denormalize(row) : row;
    }
    return actions;
}

// ---- serialization ----

uint64_t fnv1a64(const void* data, size_t len, uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t frozen_weight_hash(const PolicyModel& model) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, t] : model.backbone().named_parameters()) {
        if (name.find("lora") != std::string::npos) continue;
        h = fnv1a64(name.data(), name.size(), h);
        h = fnv1a64(t->data.data(), t->data.size() * sizeof(double), h);
    }
    return h;
}

std::string serialize_model_config(const ModelConfig& cfg) {
    std::ostringstream os;
    os << "d_model=" << cfg.backbone.d_model << "\n"
       << "num_layers=" << cfg.backbone.num_layers << "\n"
       << "num_heads=" << cfg.backbone.num_heads << "\n"
       << "patch_size=" << cfg.backbone.patch_size << "\n"
       << "image_size=" << cfg.backbone.image_size << "\n"
       << "channels=" << cfg.backbone.channels << "\n"
       << "max_text_len=" << cfg.backbone.max_text_len << "\n"
       << "num_cameras=" << cfg.backbone.num_cameras << "\n"
       << "ffn_hidden=" << cfg.backbone.ffn_hidden << "\n"
       << "pooled_tokens=" << cfg.pooled_tokens << "\n"
       << "cond_width=" << cfg.cond_width << "\n"
       << "horizon=" << cfg.horizon << "\n"
       << "exec_horizon=" << cfg.exec_horizon << "\n"
       << "diffusion_T=" << cfg.diffusion_T << "\n"
       << "diffusion_K=" << cfg.diffusion_K << "\n"
       << "denoiser_hidden=" << cfg.denoiser_hidden << "\n"
       << "time_embed_dim=" << cfg.time_embed_dim << "\n"
       << "mlp_hidden=" << cfg.mlp_hidden << "\n"
       << "lora_rank=" << cfg.lora_rank << "\n"
       << "lora_alpha=" << cfg.lora_alpha << "\n"
       << "head=" << head_type_name(cfg.head) << "\n"
       << "ar_bins=" << cfg.ar_bins << "\n"
       << "init_seed=" << cfg.init_seed << "\n";
    return os.str();
}

ModelConfig parse_model_config_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("bad config line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "d_model") cfg.backbone.d_model = std::stoi(val);
        else if (key == "num_layers") cfg.backbone.num_layers = std::stoi(val);
        else if (key == "num_heads") cfg.backbone.num_heads = std::stoi(val);
        else if (key == "patch_size") cfg.backbone.patch_size = std::stoi(val);
        else if (key == "image_size") cfg.backbone.image_size = std::stoi(val);
        else if (key == "channels") cfg.backbone.channels = std::stoi(val);
        else if (key == "max_text_len") cfg.backbone.max_text_len = std::stoi(val);
        else if (key == "num_cameras") cfg.backbone.num_cameras = std::stoi(val);
        else if (key == "ffn_hidden") cfg.backbone.ffn_hidden = std::stoi(val);
        else if (key == "pooled_tokens") cfg.pooled_tokens = std::stoi(val);
        else if (key == "cond_width") cfg.cond_width = std::stoi(val);
        else if (key == "horizon") cfg.horizon = std::stoi(val);
        else if (key == "exec_horizon") cfg.exec_horizon = std::stoi(val);
        else if (key == "diffusion_T") cfg.diffusion_T = std::stoi(val);
        else if (key == "diffusion_K") cfg.diffusion_K = std::stoi(val);
        else if (key == "denoiser_hidden") cfg.denoiser_hidden = std::stoi(val);
        else if (key == "time_embed_dim") cfg.time_embed_dim = std::stoi(val);
        else if (key == "mlp_hidden") cfg.mlp_hidden = std::stoi(val);
        else if (key == "lora_rank") cfg.lora_rank = std::stoi(val);
        else if (key == "lora_alpha") cfg.lora_alpha = std::stod(val);
        else if (key == "head") cfg.head = head_type_from_name(val);
        else if (key == "ar_bins") cfg.ar_bins = std::stoi(val);
        else if (key == "init_seed") cfg.init_seed = std::stoull(val);
        else throw std::runtime_error("unknown config key: " + key);
    }
    return cfg;
}

namespace {

constexpr char kMagic[8] = {'V', 'L', 'A', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_str(std::string& buf, const std::string& s) {
    put_u64(buf, s.size());
    buf.append(s);
}

void put_doubles(std::string& buf, const std::vector<double>& v) {
    put_u64(buf, v.size());
    static_assert(sizeof(double) == 8);
    const size_t off = buf.size();
    buf.resize(off + v.size() * 8);
    std::memcpy(buf.data() + off, v.data(), v.size() * 8);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    void need(size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint truncated");
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::string str() {
        const uint64_t n = u64();
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    std::vector<double> doubles() {
        const uint64_t n = u64();
        need(n * 8);
        std::vector<double> v(n);
        std::memcpy(v.data(), buf.data() + pos, n * 8);
        pos += n * 8;
        return v;
    }
};

}  // namespace

void save_checkpoint(const PolicyModel& model, const std::string& path) {
    std::string payload;
    put_str(payload, serialize_model_config(model.config()));

    const auto& vocab = model.backbone().vocab();
    put_u64(payload, vocab.words.size());
    for (const auto& w : vocab.words) put_str(payload, w);

    put_doubles(payload, model.action_stats.offset);
    put_doubles(payload, model.action_stats.scale);
    put_doubles(payload, model.proprio_stats.offset);
    put_doubles(payload, model.proprio_stats.scale);
    put_u64(payload, model.stats_ready ? 1 : 0);
    const bool ar_trained =
        model.config().head == HeadType::ar &&
        const_cast<PolicyModel&>(model).ar_head().trained();
    put_u64(payload, ar_trained ? 1 : 0);

    const auto named = model.named_parameters();
    put_u64(payload, named.size());
    for (const auto& [name, t] : named) {
        put_str(payload, name);
        put_u64(payload, t->shape.size());
        for (int d : t->shape) put_u64(payload, static_cast<uint64_t>(d));
        put_doubles(payload, t->data);
    }

    std::string file;
    file.append(kMagic, sizeof(kMagic));
    put_u64(file, kVersion);
    put_u64(file, payload.size());
    file += payload;
    put_u64(file, fnv1a64(payload.data(), payload.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
}

std::unique_ptr<PolicyModel> load_checkpoint(const std::string& path, bool merge,
                                             bool verify_merge) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
    std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (file.size() < sizeof(kMagic) + 24 || std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("load_checkpoint: corrupt or unrecognized file");
    }
    Reader hdr{file, sizeof(kMagic)};
    const uint64_t version = hdr.u64();
    if (version != kVersion) {
        throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
    }
    const uint64_t payload_len = hdr.u64();
    if (file.size() != sizeof(kMagic) + 16 + payload_len + 8) {
        throw std::runtime_error("load_checkpoint: corrupt file (truncated payload)");
    }
    const std::string payload = file.substr(sizeof(kMagic) + 16, payload_len);
    Reader tail{file, sizeof(kMagic) + 16 + payload_len};
    const uint64_t stored_sum = tail.u64();
    if (fnv1a64(payload.data(), payload.size()) != stored_sum) {
        throw std::runtime_error("load_checkpoint: checksum mismatch (corrupt file)");
    }

    Reader r{payload, 0};
    const ModelConfig cfg = parse_model_config_text(r.str());
    Vocabulary vocab;
    const uint64_t vn = r.u64();
    for (uint64_t i = 0; i < vn; ++i) {
        std::string w = r.str();
        vocab.ids[w] = static_cast<int>(vocab.words.size());
        vocab.words.push_back(std::move(w));
    }

    auto model = std::make_unique<PolicyModel>(cfg, vocab);
    model->action_stats.offset = r.doubles();
    model->action_stats.scale = r.doubles();
    model->proprio_stats.offset = r.doubles();
    model->proprio_stats.scale = r.doubles();
    model->stats_ready = r.u64() != 0;
    const bool ar_trained = r.u64() != 0;
    if (ar_trained && cfg.head == HeadType::ar) model->ar_head().mark_trained();

    std::map<std::string, TensorPtr> by_name;
    for (auto& [name, t] : model->named_parameters()) by_name[name] = t;
    const uint64_t count = r.u64();
    for (uint64_t i = 0; i < count; ++i) {
        const std::string name = r.str();
        const uint64_t nd = r.u64();
        std::vector<int> shape(nd);
        for (auto& d : shape) d = static_cast<int>(r.u64());
        auto values = r.doubles();
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("load_checkpoint: unknown tensor " + name);
        if (it->second->shape != shape || it->second->data.size() != values.size()) {
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        }
        it->second->data = std::move(values);
    }

    if (merge) {
        if (verify_merge) {
            // adapted-vs-merged equivalence on random probes before folding
            const int d = cfg.backbone.d_model;
            Rng rng(12345);
            auto& layers = model->backbone().layers();
            for (auto& layer : layers) {
                for (auto* ad : {&layer.lora_q, &layer.lora_k, &layer.lora_v}) {
                    auto x = Tensor::randn({4, d}, rng);
                    auto adapted = (*ad)->forward(x);
                    // dense-materialized reference
                    auto w0 = (*ad)->base();
                    auto ref = Tensor::create({4, d});
                    const double s = (*ad)->scale();
                    const auto& B = (*ad)->b();
                    const auto& A = (*ad)->a();
                    const int rk = (*ad)->rank();
                    for (int i = 0; i < 4; ++i) {
                        for (int o = 0; o < d; ++o) {
                            double acc = 0.0;
                            for (int j = 0; j < d; ++j) {
                                double w = w0->data[static_cast<size_t>(o) * d + j];
                                double delta = 0.0;
                                for (int rr = 0; rr < rk; ++rr) {
                                    delta += B->data[static_cast<size_t>(o) * rk + rr] *
                                             A->data[static_cast<size_t>(rr) * d + j];
                                }
                                acc += (w + s * delta) * x->data[static_cast<size_t>(i) * d + j];
                            }
                            ref->data[static_cast<size_t>(i) * d + o] = acc;
                        }
                    }
                    for (size_t i = 0; i < ref->data.size(); ++i) {
                        const double rel = std::abs(adapted->data[i] - ref->data[i]) /
                                           (std::abs(ref->data[i]) + 1e-12);
                        if (rel > 1e-9) {
                            throw std::runtime_error(
                                "load_checkpoint: merge-equivalence verification failed");
                        }
                    }
                }
            }
        }
        model->merge_lora();
    }
    return model;
}

}  // namespace vla
