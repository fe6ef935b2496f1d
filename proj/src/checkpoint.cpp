#include <cstring>
#include <fstream>

#include "json.hpp"
#include "rgbadit/model.hpp"

namespace rgbadit {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "RGBADIT-CKPT-1\n";

json config_to_json(const DiTConfig& c) {
    return json{{"depth", c.depth},
                {"dim", c.dim},
                {"heads", c.heads},
                {"ffn_mult", c.ffn_mult},
                {"patch", c.patch},
                {"frames", c.frames},
                {"height", c.height},
                {"width", c.width},
                {"cond_tokens", c.cond_tokens},
                {"time_embed_dim", c.time_embed_dim},
                {"num_classes", c.num_classes}};
}

DiTConfig config_from_json(const json& j) {
    DiTConfig c;
    c.depth          = j.at("depth");
    c.dim            = j.at("dim");
    c.heads          = j.at("heads");
    c.ffn_mult       = j.at("ffn_mult");
    c.patch          = j.at("patch");
    c.frames         = j.at("frames");
    c.height         = j.at("height");
    c.width          = j.at("width");
    c.cond_tokens    = j.at("cond_tokens");
    c.time_embed_dim = j.at("time_embed_dim");
    c.num_classes    = j.at("num_classes");
    return c;
}

uint64_t params_hash(const std::vector<const Parameter*>& params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto* p : params) {
        h = fnv1a64(p->name.data(), p->name.size(), h);
        h = fnv1a64(p->tensor.raw().data(), p->tensor.raw().size() * sizeof(double), h);
    }
    return h;
}

}  // namespace

uint64_t model_content_hash(const DiTModel& model) {
    return params_hash(model.parameters());
}

uint64_t base_weights_hash(const DiTModel& model) {
    return params_hash(model.base_parameters());
}

void save_checkpoint(const std::string& path, const DiTModel& model) {
    auto params = model.parameters();
    json header;
    header["config"] = config_to_json(model.cfg);
    header["scheme"] = {
        {"kind", model.scheme.kind == PositionalKind::Rope ? "rope" : "absolute_sinusoidal"},
        {"theta_base", model.scheme.theta_base}};
    header["design"]          = joint_design_name(model.design);
    header["lora_rank"]       = model.lora_rank;
    header["lora_gamma"]      = model.lora_gamma;
    header["finetune_regime"] = model.finetune_regime;
    header["content_hash"]    = model_content_hash(model);

    json table = json::array();
    int64_t offset = 0;
    for (const auto* p : params) {
        table.push_back({{"name", p->name},
                         {"shape", p->tensor.shape()},
                         {"offset", offset},
                         {"trainable", p->trainable}});
        offset += p->size();
    }
    header["params"] = std::move(table);

    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(kMagic, sizeof(kMagic) - 1);
    const uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto* p : params) {
        out.write(reinterpret_cast<const char*>(p->tensor.raw().data()),
                  static_cast<std::streamsize>(p->tensor.raw().size() * sizeof(double)));
    }
    if (!out) throw IoError("failed while writing checkpoint: " + path);
}

DiTModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[sizeof(kMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
        throw IoError("not a checkpoint file: " + path);
    }
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("truncated checkpoint header: " + path);
    json header = json::parse(hs);

    DiTConfig cfg = config_from_json(header.at("config"));
    PositionalScheme scheme;
    scheme.kind = header.at("scheme").at("kind") == "rope" ? PositionalKind::Rope
                                                           : PositionalKind::AbsoluteSinusoidal;
    scheme.theta_base = header.at("scheme").at("theta_base");
    scheme.dim        = cfg.dim;

    Rng rng(0);  // all data is overwritten below
    DiTModel model = DiTModel::create_base(cfg, scheme, rng);

    // attach whatever extension modules the parameter table names
    const auto& table = header.at("params");
    bool has_lora = false, has_comm = false, has_latent = false;
    for (const auto& e : table) {
        const std::string n = e.at("name");
        has_lora |= n.rfind("lora.", 0) == 0;
        has_comm |= n.rfind("comm.", 0) == 0;
        has_latent |= n.rfind("merge.", 0) == 0;
    }
    if (has_lora) {
        model.attach_sequence_adapters(std::max<int>(1, header.value("lora_rank", 1)),
                                       header.value("lora_gamma", 1.0), rng);
    }
    if (has_comm) model.attach_batch_comm(rng);
    if (has_latent) model.attach_latent_maps();
    model.design = joint_design_from_name(header.at("design"));

    auto params = model.parameters();
    if (params.size() != table.size()) {
        throw IoError("checkpoint parameter table does not match the reconstructed model");
    }
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& e       = table[i];
        const std::string n = e.at("name");
        if (n != params[i]->name) {
            throw IoError("checkpoint parameter order mismatch at " + n);
        }
        const Shape shape = e.at("shape").get<Shape>();
        if (shape != params[i]->tensor.shape()) {
            throw IoError("checkpoint shape mismatch for " + n);
        }
        in.read(reinterpret_cast<char*>(params[i]->tensor.raw().data()),
                static_cast<std::streamsize>(params[i]->tensor.raw().size() * sizeof(double)));
        params[i]->set_trainable(e.at("trainable"));
    }
    if (!in) throw IoError("truncated checkpoint data: " + path);
    model.finetune_regime = header.value("finetune_regime", false);
    if (model_content_hash(model) != header.at("content_hash").get<uint64_t>()) {
        throw IoError("checkpoint content hash mismatch: " + path);
    }
    return model;
}

}  // namespace rgbadit
