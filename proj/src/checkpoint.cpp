#include "clare/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"

namespace clare {

using nlohmann::json;

void save_checkpoint(const PolicyModel& m, const std::string& base) {
    json banks_j = json::array();
    for (const auto& bank : m.banks) {
        json adapters = json::array();
        for (const auto& a : bank.adapters)
            adapters.push_back({{"index", a.index},
                                {"created_stage", a.created_stage},
                                {"rank", a.W_down->shape[0]}});
        json discs = json::array();
        for (const auto& d : bank.discriminators)
            discs.push_back({{"stage", d.stage},
                             {"bottleneck", d.W_enc->shape[0]},
                             {"mu", d.mu},
                             {"sigma", d.sigma},
                             {"finalized", d.finalized}});
        banks_j.push_back({{"layer", bank.layer},
                           {"adapters", adapters},
                           {"discriminators", discs},
                           {"link", bank.link}});
    }
    const std::string blob_name = std::filesystem::path(base).filename().string() + ".blob";
    json manifest = {{"format_version", kCheckpointFormatVersion},
                     {"stage", m.stage},
                     {"backbone", m.net.cfg.to_json()},
                     {"normalizer", {{"lo", m.norm.lo}, {"hi", m.norm.hi}}},
                     {"banks", banks_j},
                     {"blob", blob_name}};

    std::ofstream out(base + ".json", std::ios::trunc);
    if (!out) throw CheckpointError("cannot write manifest: " + base + ".json");
    out << manifest.dump(2) << "\n";
    out.close();

    std::vector<BlobEntry> entries;
    for (const auto& [name, t] : m.named_parameters())
        entries.push_back({name, BlobDType::f32, t->shape, t->value});
    write_blob(base + ".blob", entries);
}

PolicyModel load_checkpoint(const std::string& base) {
    std::ifstream in(base + ".json");
    if (!in) throw CheckpointError("cannot open manifest: " + base + ".json");
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw CheckpointError("bad manifest " + base + ".json: " + e.what());
    }
    const int version = manifest.value("format_version", -1);
    if (version != kCheckpointFormatVersion)
        throw CheckpointError("checkpoint format version " + std::to_string(version) +
                              ", expected " + std::to_string(kCheckpointFormatVersion));

    PolicyModel m;
    try {
        m.net.cfg = BackboneConfig::from_json(manifest.at("backbone"));
        m.stage = manifest.at("stage");
        m.norm.lo = manifest.at("normalizer").at("lo").get<std::vector<double>>();
        m.norm.hi = manifest.at("normalizer").at("hi").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw CheckpointError("bad manifest " + base + ".json: " + e.what());
    }

    // Structure first (zero-filled tensors with canonical names), values below.
    {
        Rng dummy(0);
        Backbone fresh = Backbone::init(m.net.cfg, dummy);
        m.net = std::move(fresh);
    }
    for (const auto& bank_j : manifest.at("banks")) {
        LayerBank bank;
        bank.layer = bank_j.at("layer");
        for (const auto& aj : bank_j.at("adapters")) {
            Adapter a;
            a.layer = bank.layer;
            a.index = aj.at("index");
            a.created_stage = aj.at("created_stage");
            const int rank = aj.at("rank");
            const std::string prefix =
                "bank" + std::to_string(bank.layer) + ".a" + std::to_string(a.index);
            a.W_down = tensor({rank, m.net.cfg.enc_width});
            a.W_down->name = prefix + ".Wdown";
            a.W_up = tensor({m.net.cfg.enc_width, rank});
            a.W_up->name = prefix + ".Wup";
            bank.adapters.push_back(std::move(a));
        }
        for (const auto& dj : bank_j.at("discriminators")) {
            Discriminator d;
            d.layer = bank.layer;
            d.stage = dj.at("stage");
            d.mu = dj.at("mu");
            d.sigma = dj.at("sigma");
            d.finalized = dj.at("finalized");
            const int rb = dj.at("bottleneck");
            const std::string prefix =
                "bank" + std::to_string(bank.layer) + ".d" + std::to_string(d.stage);
            d.W_enc = tensor({rb, m.net.cfg.enc_width});
            d.W_enc->name = prefix + ".Wenc";
            d.W_dec = tensor({m.net.cfg.enc_width, rb});
            d.W_dec->name = prefix + ".Wdec";
            bank.discriminators.push_back(std::move(d));
        }
        bank.link = bank_j.at("link").get<std::vector<int>>();
        if (bank.link.size() != bank.discriminators.size())
            throw CheckpointError("manifest bank " + std::to_string(bank.layer) +
                                  ": link map does not cover discriminators");
        m.banks.push_back(std::move(bank));
    }
    if (m.banks.size() != m.net.cfg.expandable.size())
        throw CheckpointError("manifest: bank count does not match expandable layers");

    // Fill values by name.
    const std::string blob_path =
        (std::filesystem::path(base).parent_path() /
         manifest.at("blob").get<std::string>())
            .string();
    auto entries = read_blob(blob_path);
    std::map<std::string, BlobEntry*> by_name;
    for (auto& e : entries) {
        if (by_name.count(e.name))
            throw CheckpointError("blob has duplicate tensor name: " + e.name);
        by_name[e.name] = &e;
    }
    std::size_t used = 0;
    for (const auto& [name, t] : m.named_parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw CheckpointError("blob missing tensor: " + name);
        const BlobEntry& e = *it->second;
        if (e.shape != t->shape)
            throw CheckpointError("blob tensor " + name + " has shape " + shape_str(e.shape) +
                                  ", expected " + shape_str(t->shape));
        t->value = e.values;
        ++used;
    }
    if (used != entries.size()) {
        for (const auto& e : entries) {
            bool known = false;
            for (const auto& [name, t] : m.named_parameters()) known = known || name == e.name;
            if (!known) throw CheckpointError("blob has unknown tensor name: " + e.name);
        }
    }
    return m;
}

}  // namespace clare
