#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppvi/dp.hpp"
#include "dppvi/protocol.hpp"

namespace dppvi {

using json = nlohmann::json;

// Natural-parameter vectors are serialized as little-endian 64-bit floats;
// the trace stores an FNV-1a checksum over those bytes.
inline void append_f64_le(std::vector<std::uint8_t>& out, double x) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline std::vector<std::uint8_t> lambda_bytes_le(const Eigen::VectorXd& lambda) {
    std::vector<std::uint8_t> out;
    out.reserve(static_cast<std::size_t>(lambda.size()) * 8);
    for (Eigen::Index i = 0; i < lambda.size(); ++i) append_f64_le(out, lambda[i]);
    return out;
}

inline std::string fnv1a64_hex(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return out;
}

inline std::string lambda_checksum(const Eigen::VectorXd& lambda) {
    return fnv1a64_hex(lambda_bytes_le(lambda));
}

inline json epsilon_to_json(double eps) {
    if (!std::isfinite(eps)) return nullptr;  // unbounded (e.g. sigma = 0 releases)
    return eps;
}

inline json round_record_to_json(const RoundRecord& rec) {
    json j;
    j["round"] = rec.round;
    j["cumulative_communications"] = rec.cumulative_communications;
    j["lambda_checksum"] = lambda_checksum(rec.global_lambda);
    json eps = json::array();
    for (double e : rec.client_epsilons) eps.push_back(epsilon_to_json(e));
    j["epsilons"] = eps;
    j["epsilon_global"] = epsilon_to_json(rec.epsilon_global);
    if (rec.has_metrics) {
        j["accuracy"] = rec.accuracy;
        j["mean_loglik"] = rec.mean_loglik;
    } else {
        j["accuracy"] = nullptr;
        j["mean_loglik"] = nullptr;
    }
    return j;
}

inline json ledger_to_json(const PrivacyLedger& ledger) {
    json entries = json::array();
    for (const auto& e : ledger.entries()) {
        json je;
        je["mechanism"] = e.kind == MechanismKind::dp_sgd ? "dp_sgd" : "update_perturbation";
        je["sigma"] = e.sigma;
        je["q_sample"] = e.q_sample;
        je["invocations"] = e.invocations;
        entries.push_back(je);
    }
    json j;
    j["owner"] = ledger.owner();
    j["entries"] = entries;
    return j;
}

}  // namespace dppvi
