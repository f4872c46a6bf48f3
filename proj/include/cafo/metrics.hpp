#pragma once

#include "cafo/synthgen.hpp"
#include "cafo/tensor.hpp"

#include <span>
#include <vector>

namespace cafo {

struct GiReport {
    std::vector<double> gi;
    std::vector<std::size_t> rank_desc;
};

/// Column means of an N x D attention matrix; ranks descend, ties to the
/// lower index.
GiReport global_importance(const Tensor& attentions);
std::vector<std::size_t> rank_descending(std::span<const double> values);

struct CwriMatrix {
    std::size_t c = 0;
    std::size_t d = 0;
    std::vector<double> scores; // C x D
    std::vector<int> binarized; // score >= 0
};

/// CWRI(c) = p_c - mean of the other prototypes. prototypes: C x D.
CwriMatrix cwri(const Tensor& prototypes);

struct RoarCurve {
    std::vector<std::size_t> x;
    std::vector<double> truth;
    std::vector<double> inverse;
};

/// Trapezoid area of (inverse - truth) over x scaled to [0, 1].
double abc(const RoarCurve& curve);
double abc(std::span<const double> truth, std::span<const double> inverse);
/// Percentage drop: 100 * (base - k) / base.
double drop_in_accuracy(double base_acc, double k_acc);
/// Number of removed features for a K fraction (rounded, at least 1).
std::size_t removal_count(std::size_t d, double fraction = 0.2);
double weighted_drop(double base_acc, std::span<const double> accs);
std::vector<double> wda_weights(std::size_t d);

struct RankCorrelation {
    double spearman = 0.0;
    double kendall = 0.0;
};

/// Spearman / Kendall tau-b between two score or rank vectors.
double spearman(std::span<const double> a, std::span<const double> b);
double kendall_tau_b(std::span<const double> a, std::span<const double> b);
/// `rankings[k][j]` is the rank position of feature j in run k. Means over
/// all unordered pairs.
RankCorrelation rank_correlations(const std::vector<std::vector<double>>& rankings);
/// Feature order (rank_desc) -> rank position per feature.
std::vector<double> positions_from_order(std::span<const std::size_t> order);

struct Agreement {
    double f1 = 0.0;
    double jaccard = 0.0;
    double iacc = 0.0;
};

struct GtAgreement {
    Agreement a;
    Agreement b;
    char selected = 'A';
    const Agreement& best() const { return selected == 'A' ? a : b; }
};

Agreement agreement(std::span<const int> pred, std::span<const int> truth);
GtAgreement gt_agreement(std::span<const int> pred, const GroundTruthMask& gt);

/// Between/within dispersion ratio. +inf when within-dispersion is 0.
double calinski_harabasz(const Tensor& points, std::span<const int> labels);

} // namespace cafo
