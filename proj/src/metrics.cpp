#include "icdlaat/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace icdlaat {

std::vector<std::size_t> decide(const std::vector<double>& probabilities,
                                double threshold) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        if (probabilities[i] >= threshold) {
            out.push_back(i);
        }
    }
    return out;
}

EvalReport micro_prf(const std::vector<std::set<std::size_t>>& predictions,
                     const std::vector<std::set<std::size_t>>& golds,
                     bool exclude_other, const LabelSpace& space) {
    if (predictions.size() != golds.size()) {
        throw LengthMismatch("got " + std::to_string(predictions.size()) +
                             " predictions for " + std::to_string(golds.size()) +
                             " gold sets");
    }
    const bool drop_other = exclude_other && space.has_other();
    const std::size_t other = space.has_other() ? space.other_index() : 0;

    EvalReport r;
    r.n_stays = predictions.size();
    r.excluded_other = drop_other;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        for (std::size_t p : predictions[i]) {
            if (drop_other && p == other) {
                continue;
            }
            if (golds[i].count(p)) {
                r.tp += 1;
                r.per_label[space.label(p)].tp += 1;
            } else {
                r.fp += 1;
                r.per_label[space.label(p)].fp += 1;
            }
        }
        for (std::size_t g : golds[i]) {
            if (drop_other && g == other) {
                continue;
            }
            if (!predictions[i].count(g)) {
                r.fn += 1;
                r.per_label[space.label(g)].fn += 1;
            }
        }
    }
    r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
    r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
    r.f1 = r.precision + r.recall > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    return r;
}

std::string EvalReport::to_text() const {
    char buf[64];
    std::ostringstream out;
    out << "stays: " << n_stays << "\n";
    out << "tp: " << tp << "\n";
    out << "fp: " << fp << "\n";
    out << "fn: " << fn << "\n";
    std::snprintf(buf, sizeof buf, "%.6f", precision);
    out << "precision: " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.6f", recall);
    out << "recall: " << buf << "\n";
    std::snprintf(buf, sizeof buf, "%.6f", f1);
    out << "f1: " << buf << "\n";
    out << "excluded_other: " << (excluded_other ? "true" : "false") << "\n";
    return out.str();
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["n_stays"] = n_stays;
    j["tp"] = tp;
    j["fp"] = fp;
    j["fn"] = fn;
    j["precision"] = precision;
    j["recall"] = recall;
    j["f1"] = f1;
    j["excluded_other"] = excluded_other;
    nlohmann::json pl = nlohmann::json::object();
    for (const auto& [label, c] : per_label) {
        pl[label] = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    }
    j["per_label"] = pl;
    return j.dump(2);
}

} // namespace icdlaat
