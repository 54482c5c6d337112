#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "icdlaat/errors.hpp"
#include "icdlaat/labelspace.hpp"

namespace icdlaat {

class LengthMismatch : public Error {
public:
    using Error::Error;
};

struct LabelCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

/// Micro-averaged evaluation: counts pooled over all stays and labels, then
/// P/R/F1 computed once. Empty denominators yield 0, keeping reports total.
struct EvalReport {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::map<std::string, LabelCounts> per_label;
    std::size_t n_stays = 0;
    bool excluded_other = false;

    std::string to_text() const;
    std::string to_json() const;
};

/// Label indices with probability >= threshold (inclusive).
std::vector<std::size_t> decide(const std::vector<double>& probabilities,
                                double threshold);

EvalReport micro_prf(const std::vector<std::set<std::size_t>>& predictions,
                     const std::vector<std::set<std::size_t>>& golds,
                     bool exclude_other, const LabelSpace& space);

} // namespace icdlaat
