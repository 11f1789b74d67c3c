#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dpbnn/network.hpp"
#include "dpbnn/posterior.hpp"

namespace dpbnn {

inline std::string head_name(Head h) {
    return h == Head::Classification ? "classification" : "heteroscedastic-regression";
}

inline Head head_from_name(const std::string& s) {
    if (s == "classification") return Head::Classification;
    if (s == "heteroscedastic-regression") return Head::HeteroscedasticRegression;
    throw std::invalid_argument("unknown head kind: " + s);
}

inline nlohmann::json architecture_json(const std::vector<std::size_t>& sizes, Head head) {
    return {{"layer_sizes", sizes}, {"head", head_name(head)}};
}

// Training-state checkpoint: architecture + flat parameters + optimizer tag
// + step counter.
inline void save_checkpoint(const std::string& path, const Network& net,
                            const std::string& optimizer, long step) {
    nlohmann::json j;
    j["architecture"] = architecture_json(net.layer_sizes(), net.head());
    j["params"] = net.flat_params();
    j["optimizer"] = optimizer;
    j["step"] = step;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

struct Checkpoint {
    Network net;
    std::string optimizer;
    long step;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    Network net(j.at("architecture").at("layer_sizes").get<std::vector<std::size_t>>(),
                head_from_name(j.at("architecture").at("head").get<std::string>()));
    net.set_flat_params(j.at("params").get<Vector>());
    return {std::move(net), j.at("optimizer").get<std::string>(), j.at("step").get<long>()};
}

inline std::string ensemble_kind_name(EnsembleKind k) {
    switch (k) {
        case EnsembleKind::SgldSnapshots: return "sgld-snapshots";
        case EnsembleKind::BbpVariational: return "bbp-variational";
        case EnsembleKind::McDropout: return "mc-dropout";
    }
    throw std::logic_error("unreachable");
}

inline EnsembleKind ensemble_kind_from_name(const std::string& s) {
    if (s == "sgld-snapshots") return EnsembleKind::SgldSnapshots;
    if (s == "bbp-variational") return EnsembleKind::BbpVariational;
    if (s == "mc-dropout") return EnsembleKind::McDropout;
    throw std::invalid_argument("unknown ensemble kind: " + s);
}

inline void save_ensemble(const std::string& path, const PosteriorEnsemble& ens) {
    nlohmann::json j;
    j["kind"] = ensemble_kind_name(ens.kind);
    j["architecture"] = architecture_json(ens.layer_sizes, ens.head);
    switch (ens.kind) {
        case EnsembleKind::SgldSnapshots:
            j["snapshots"] = ens.snapshots;
            break;
        case EnsembleKind::BbpVariational:
            j["mu"] = ens.vp.mu;
            j["rho"] = ens.vp.rho;
            break;
        case EnsembleKind::McDropout:
            j["params"] = ens.base_params;
            j["drop_rate"] = ens.drop_rate;
            break;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
}

inline PosteriorEnsemble load_ensemble(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    nlohmann::json j;
    in >> j;
    PosteriorEnsemble ens;
    ens.kind = ensemble_kind_from_name(j.at("kind").get<std::string>());
    ens.layer_sizes = j.at("architecture").at("layer_sizes").get<std::vector<std::size_t>>();
    ens.head = head_from_name(j.at("architecture").at("head").get<std::string>());
    switch (ens.kind) {
        case EnsembleKind::SgldSnapshots:
            ens.snapshots = j.at("snapshots").get<std::vector<Vector>>();
            break;
        case EnsembleKind::BbpVariational:
            ens.vp.mu = j.at("mu").get<Vector>();
            ens.vp.rho = j.at("rho").get<Vector>();
            break;
        case EnsembleKind::McDropout:
            ens.base_params = j.at("params").get<Vector>();
            ens.drop_rate = j.at("drop_rate").get<double>();
            break;
    }
    return ens;
}

}  // namespace dpbnn
