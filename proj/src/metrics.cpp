#include "cafo/metrics.hpp"

#include "cafo/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace cafo {

std::vector<std::size_t> rank_descending(std::span<const double> values)
{
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    return idx;
}

GiReport global_importance(const Tensor& att)
{
    if (att.rank() != 2 || att.dim(0) == 0) throw ShapeError("global_importance: need a non-empty N x D matrix");
    const std::size_t n = att.dim(0);
    const std::size_t d = att.dim(1);
    GiReport r;
    r.gi.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) r.gi[j] += att.at(i, j);
    for (double& g : r.gi) g /= double(n);
    r.rank_desc = rank_descending(r.gi);
    return r;
}

CwriMatrix cwri(const Tensor& p)
{
    if (p.rank() != 2 || p.dim(0) < 2) throw ShapeError("cwri needs at least two class prototypes");
    CwriMatrix out;
    out.c = p.dim(0);
    out.d = p.dim(1);
    out.scores.resize(out.c * out.d);
    out.binarized.resize(out.c * out.d);
    for (std::size_t j = 0; j < out.d; ++j) {
        double total = 0.0;
        for (std::size_t c = 0; c < out.c; ++c) total += p.at(c, j);
        for (std::size_t c = 0; c < out.c; ++c) {
            const double others = (total - p.at(c, j)) / double(out.c - 1);
            const double s = p.at(c, j) - others;
            out.scores[c * out.d + j] = s;
            out.binarized[c * out.d + j] = s >= 0.0 ? 1 : 0;
        }
    }
    return out;
}

double abc(std::span<const double> truth, std::span<const double> inverse)
{
    if (truth.size() != inverse.size()) throw ShapeError("abc: curve lengths differ");
    if (truth.size() < 2) throw ShapeError("abc: need at least two points");
    const double dx = 1.0 / double(truth.size() - 1);
    double area = 0.0;
    for (std::size_t k = 0; k + 1 < truth.size(); ++k)
        area += 0.5 * ((inverse[k] - truth[k]) + (inverse[k + 1] - truth[k + 1])) * dx;
    return area;
}

double abc(const RoarCurve& c) { return abc(c.truth, c.inverse); }

double drop_in_accuracy(double base, double k)
{
    if (base <= 0.0) throw ShapeError("drop_in_accuracy: base accuracy must be positive");
    return 100.0 * (base - k) / base;
}

std::size_t removal_count(std::size_t d, double fraction)
{
    return std::max<std::size_t>(1, std::size_t(std::llround(fraction * double(d))));
}

std::vector<double> wda_weights(std::size_t d)
{
    std::vector<double> w(d, 1.0);
    if (d < 2) return w;
    for (std::size_t k = 0; k < d; ++k) w[k] = double(d - k - 1) / double(d - 1);
    return w;
}

double weighted_drop(double base, std::span<const double> accs)
{
    const auto w = wda_weights(accs.size());
    double s = 0.0;
    for (std::size_t k = 0; k < accs.size(); ++k) s += (base - accs[k]) * w[k];
    return s;
}

namespace {

// Average ranks (1-based) with ties sharing the mean rank.
std::vector<double> average_ranks(std::span<const double> v)
{
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * double(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace

double spearman(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw ShapeError("spearman: lengths differ");
    const std::size_t n = a.size();
    if (n < 2) throw ShapeError("spearman: need at least two items");
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    bool ties = false;
    for (std::size_t i = 0; i < n && !ties; ++i) ties = ra[i] != std::floor(ra[i]) || rb[i] != std::floor(rb[i]);
    if (!ties) {
        double d2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
        const double nn = double(n);
        return 1.0 - 6.0 * d2 / (nn * (nn * nn - 1.0));
    }
    // Pearson on average ranks when ties are present
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / double(n);
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / double(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

double kendall_tau_b(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw ShapeError("kendall: lengths differ");
    if (a.size() < 2) throw ShapeError("kendall: need at least two items");
    long long conc = 0, disc = 0, tie_a = 0, tie_b = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = i + 1; j < a.size(); ++j) {
            const double da = a[i] - a[j];
            const double db = b[i] - b[j];
            if (da == 0.0 && db == 0.0) continue;
            if (da == 0.0) ++tie_a;
            else if (db == 0.0) ++tie_b;
            else if ((da > 0) == (db > 0)) ++conc;
            else ++disc;
        }
    const double denom = std::sqrt(double(conc + disc + tie_a) * double(conc + disc + tie_b));
    if (denom == 0.0) return 0.0;
    return double(conc - disc) / denom;
}

RankCorrelation rank_correlations(const std::vector<std::vector<double>>& rankings)
{
    if (rankings.size() < 2) throw ShapeError("rank_correlations: need at least two rankings");
    RankCorrelation out;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < rankings.size(); ++i)
        for (std::size_t j = i + 1; j < rankings.size(); ++j) {
            if (rankings[i].size() != rankings[j].size()) throw ShapeError("rank_correlations: lengths differ");
            out.spearman += spearman(rankings[i], rankings[j]);
            out.kendall += kendall_tau_b(rankings[i], rankings[j]);
            ++pairs;
        }
    out.spearman /= double(pairs);
    out.kendall /= double(pairs);
    return out;
}

std::vector<double> positions_from_order(std::span<const std::size_t> order)
{
    std::vector<double> pos(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) pos.at(order[k]) = double(k);
    return pos;
}

Agreement agreement(std::span<const int> pred, std::span<const int> truth)
{
    if (pred.size() != truth.size()) throw ShapeError("agreement: shapes differ");
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0;
        const bool t = truth[i] != 0;
        if (p && t) ++tp;
        else if (p) ++fp;
        else if (t) ++fn;
        else ++tn;
    }
    Agreement a;
    const double f1_den = 2 * tp + fp + fn;
    a.f1 = f1_den > 0 ? 2 * tp / f1_den : 1.0;
    const double j_den = tp + fp + fn;
    a.jaccard = j_den > 0 ? tp / j_den : 1.0;
    a.iacc = pred.empty() ? 0.0 : (tp + tn) / double(pred.size());
    return a;
}

GtAgreement gt_agreement(std::span<const int> pred, const GroundTruthMask& gt)
{
    if (pred.size() != gt.c * gt.d) throw ShapeError("gt_agreement: prediction is not C x D");
    GtAgreement out;
    out.a = agreement(pred, gt.variant_a);
    out.b = agreement(pred, gt.variant_b);
    out.selected = out.b.f1 > out.a.f1 ? 'B' : 'A';
    return out;
}

double calinski_harabasz(const Tensor& x, std::span<const int> labels)
{
    if (x.rank() != 2 || x.dim(0) != labels.size()) throw ShapeError("calinski_harabasz: points do not match labels");
    const std::size_t n = x.dim(0);
    const std::size_t d = x.dim(1);
    std::map<int, std::size_t> row_of;
    for (int y : labels) row_of.emplace(y, 0);
    std::size_t k = 0;
    for (auto& [cls, row] : row_of) row = k++;
    if (k < 2 || n <= k) throw ShapeError("calinski_harabasz: need >= 2 classes and N > C");
    std::vector<double> centre(d, 0.0), means(k * d, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = row_of[labels[i]];
        ++counts[r];
        for (std::size_t j = 0; j < d; ++j) {
            means[r * d + j] += x.at(i, j);
            centre[j] += x.at(i, j);
        }
    }
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < d; ++j) means[r * d + j] /= double(counts[r]);
    for (double& v : centre) v /= double(n);
    double between = 0.0, within = 0.0;
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = means[r * d + j] - centre[j];
            between += double(counts[r]) * diff * diff;
        }
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = row_of[labels[i]];
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = x.at(i, j) - means[r * d + j];
            within += diff * diff;
        }
    }
    if (within == 0.0) return between == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return (between / double(k - 1)) / (within / double(n - k));
}

} // namespace cafo
