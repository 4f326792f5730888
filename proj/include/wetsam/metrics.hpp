#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wetsam/data/cube.hpp"
#include "wetsam/errors.hpp"

namespace wetsam {

/// Per-class confusion counts with precision, recall and F1, plus macro averages
/// over the classes that occur in the truth.
struct EvalReport {
    std::size_t num_classes = 0;
    std::size_t evaluated = 0;
    std::size_t correct = 0;
    std::vector<std::size_t> tp, fp, fn;
    std::vector<double> precision, recall, f1;
    std::vector<bool> present;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;

    double overall_accuracy() const {
        return evaluated ? static_cast<double>(correct) / static_cast<double>(evaluated) : 0.0;
    }

    /// Flat "key = value" listing.
    std::string to_text() const {
        std::ostringstream os;
        os << std::setprecision(6) << std::fixed;
        os << "evaluated_pixels = " << evaluated << '\n';
        os << "overall_accuracy = " << overall_accuracy() << '\n';
        for (std::size_t k = 0; k < num_classes; ++k) {
            const std::string p = "class_" + std::to_string(k) + ".";
            os << p << "present = " << (present[k] ? "true" : "false") << '\n';
            os << p << "tp = " << tp[k] << '\n' << p << "fp = " << fp[k] << '\n' << p << "fn = " << fn[k] << '\n';
            os << p << "precision = " << precision[k] << '\n';
            os << p << "recall = " << recall[k] << '\n';
            os << p << "f1 = " << f1[k] << '\n';
        }
        os << "macro.precision = " << macro_precision << '\n';
        os << "macro.recall = " << macro_recall << '\n';
        os << "macro.f1 = " << macro_f1 << '\n';
        return os.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["evaluated_pixels"] = evaluated;
        j["overall_accuracy"] = overall_accuracy();
        j["classes"] = nlohmann::json::array();
        for (std::size_t k = 0; k < num_classes; ++k) {
            j["classes"].push_back({{"class", k},
                                    {"present", static_cast<bool>(present[k])},
                                    {"tp", tp[k]},
                                    {"fp", fp[k]},
                                    {"fn", fn[k]},
                                    {"precision", precision[k]},
                                    {"recall", recall[k]},
                                    {"f1", f1[k]}});
        }
        j["macro"] = {{"precision", macro_precision}, {"recall", macro_recall}, {"f1", macro_f1}};
        return j;
    }
};

/// Accumulates a confusion matrix restricted to pixels with known truth.
class ConfusionAccumulator {
public:
    explicit ConfusionAccumulator(std::size_t num_classes)
        : k_(num_classes), tp_(num_classes, 0), fp_(num_classes, 0), fn_(num_classes, 0) {}

    /// `pred` may be kUnlabeled (counts as a miss, never as a false positive).
    void add(std::uint8_t truth, std::uint8_t pred) {
        if (truth == kUnlabeled) return;
        if (truth >= k_) throw DataError("truth class " + std::to_string(truth) + " outside class range");
        ++n_;
        if (pred == truth) {
            ++tp_[truth];
            ++correct_;
            return;
        }
        ++fn_[truth];
        if (pred != kUnlabeled) {
            if (pred >= k_) throw DataError("predicted class " + std::to_string(pred) + " outside class range");
            ++fp_[pred];
        }
    }

    EvalReport report() const {
        if (n_ == 0) throw DataError("evaluation needs at least one pixel with known truth");
        EvalReport r;
        r.num_classes = k_;
        r.evaluated = n_;
        r.correct = correct_;
        r.tp = tp_;
        r.fp = fp_;
        r.fn = fn_;
        r.precision.assign(k_, 0.0);
        r.recall.assign(k_, 0.0);
        r.f1.assign(k_, 0.0);
        r.present.assign(k_, false);
        std::size_t present = 0;
        for (std::size_t k = 0; k < k_; ++k) {
            const double tp = static_cast<double>(tp_[k]);
            if (tp_[k] + fp_[k] > 0) r.precision[k] = tp / static_cast<double>(tp_[k] + fp_[k]);
            if (tp_[k] + fn_[k] > 0) r.recall[k] = tp / static_cast<double>(tp_[k] + fn_[k]);
            const std::size_t denom = 2 * tp_[k] + fp_[k] + fn_[k];
            if (denom > 0) r.f1[k] = 2.0 * tp / static_cast<double>(denom);
            r.present[k] = tp_[k] + fn_[k] > 0;
            if (!r.present[k]) continue;
            ++present;
            r.macro_precision += r.precision[k];
            r.macro_recall += r.recall[k];
            r.macro_f1 += r.f1[k];
        }
        r.macro_precision /= static_cast<double>(present);
        r.macro_recall /= static_cast<double>(present);
        r.macro_f1 /= static_cast<double>(present);
        return r;
    }

private:
    std::size_t k_;
    std::vector<std::size_t> tp_, fp_, fn_;
    std::size_t n_ = 0, correct_ = 0;
};

/// Dense evaluation over pixels where truth is labeled and `mask` (if non-empty) is set.
inline EvalReport evaluate(const LabelMap& pred, const LabelMap& truth, std::size_t num_classes,
                           const std::vector<std::uint8_t>& mask = {}) {
    if (pred.H != truth.H || pred.W != truth.W) {
        throw DimensionError("prediction " + std::to_string(pred.H) + "x" + std::to_string(pred.W) +
                             " does not match truth " + std::to_string(truth.H) + "x" + std::to_string(truth.W));
    }
    if (!mask.empty() && mask.size() != truth.labels.size()) throw DimensionError("evaluation mask size mismatch");
    ConfusionAccumulator acc(num_classes);
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        acc.add(truth.labels[i], pred.labels[i]);
    }
    return acc.report();
}

/// Evaluation restricted to annotated point locations.
inline EvalReport evaluate(const LabelMap& pred, const SparsePointSet& truth, const std::vector<std::uint8_t>& mask = {}) {
    truth.validate(pred.H, pred.W);
    ConfusionAccumulator acc(truth.num_classes);
    for (const auto& p : truth.points) {
        if (!mask.empty() && !mask[p.row * pred.W + p.col]) continue;
        acc.add(p.class_id, pred.at(p.row, p.col));
    }
    return acc.report();
}

} // namespace wetsam
