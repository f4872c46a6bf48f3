#include "cafo/synthgen.hpp"

#include "cafo/error.hpp"
#include "cafo/rng.hpp"

#include "json.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace cafo {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kClasses = 3;
constexpr const char* kPseudoPrefix = "pseudo_";

} // namespace

void SquidGameConfig::validate() const
{
    if (n_per_class == 0) throw ShapeError("n-per-class must be positive");
    if (d == 0 || d % kClasses != 0) throw ShapeError("D must split into 3 equal feature groups");
    if (t < 2) throw ShapeError("T must be at least 2");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ShapeError("noise sigma must be >= 0");
    if (!std::isfinite(amplitude)) throw ShapeError("amplitude must be finite");
    if (!(freq_lo <= freq_hi)) throw ShapeError("frequency range is empty");
    if (!(size_lo > 0.0 && size_lo <= size_hi)) throw ShapeError("mask size range is invalid");
    if (folds == 0) throw ShapeError("folds must be positive");
}

std::vector<int> shape_mask(int shape, std::size_t t, std::size_t width, double ct, double cf, double r)
{
    std::vector<int> m(t * width, 0);
    for (std::size_t s = 0; s < t; ++s)
        for (std::size_t f = 0; f < width; ++f) {
            const double dt = double(s) - ct;
            const double df = double(f) - cf;
            bool in = false;
            switch (shape) {
            case 0: in = dt * dt + df * df <= r * r; break;
            case 1: in = dt >= -r && dt <= r && std::abs(df) <= (dt + r) / 2.0; break;
            case 2: in = std::abs(dt) <= r && std::abs(df) <= r; break;
            default: throw ShapeError("unknown shape id");
            }
            m[s * width + f] = in ? 1 : 0;
        }
    return m;
}

SquidGame gen_squidgame(const SquidGameConfig& cfg)
{
    cfg.validate();
    const std::size_t n = cfg.n_per_class * kClasses;
    const std::size_t group = cfg.d / kClasses;
    SquidGame out;
    MtsDataset& ds = out.data;
    ds.t = cfg.t;
    ds.d = cfg.d;
    ds.c = kClasses;
    ds.values.resize(n * cfg.t * cfg.d);
    ds.labels.resize(n);
    for (std::size_t j = 0; j < cfg.d; ++j) ds.feature_names.push_back("f" + std::to_string(j));

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < std::ptrdiff_t(n); ++ii) {
        const auto i = std::size_t(ii);
        const int c = int(i / cfg.n_per_class);
        ds.labels[i] = c;
        Rng rng(derive_seed(cfg.seed, i));
        std::normal_distribution<double> noise(0.0, 1.0);
        double* x = ds.values.data() + i * cfg.t * cfg.d;
        for (std::size_t k = 0; k < cfg.t * cfg.d; ++k) x[k] = cfg.noise_sigma * noise(rng);

        std::uniform_real_distribution<double> u01(0.0, 1.0);
        const double size = cfg.size_lo + (cfg.size_hi - cfg.size_lo) * u01(rng);
        const double ct = double(cfg.t - 1) * u01(rng);
        const double cf = double(group - 1) * u01(rng);
        const double freq = cfg.freq_lo + (cfg.freq_hi - cfg.freq_lo) * u01(rng);
        const double phase = 2.0 * std::numbers::pi * u01(rng);
        const auto m = shape_mask(c, cfg.t, group, ct, cf, size);
        for (std::size_t s = 0; s < cfg.t; ++s) {
            const double sig = cfg.amplitude * std::sin(2.0 * std::numbers::pi * freq * double(s) + phase);
            for (std::size_t f = 0; f < group; ++f)
                if (m[s * group + f]) x[s * cfg.d + std::size_t(c) * group + f] = sig;
        }
        for (std::size_t k = 0; k < cfg.t * cfg.d; ++k) x[k] = quantize_f32(x[k]);
    }
    assign_splits(ds, cfg.folds, cfg.test_fraction, cfg.seed);

    GroundTruthMask& gt = out.truth;
    gt.c = kClasses;
    gt.d = cfg.d;
    gt.variant_a.assign(kClasses * cfg.d, 0);
    gt.variant_b.assign(kClasses * cfg.d, 0);
    for (std::size_t c = 0; c < kClasses; ++c)
        for (std::size_t j = 0; j < cfg.d; ++j) {
            const bool own = j / group == c;
            gt.variant_a[c * cfg.d + j] = own ? 1 : 0;
            gt.variant_b[c * cfg.d + j] = own ? 0 : 1;
        }
    return out;
}

void write_ground_truth(const GroundTruthMask& gt, const fs::path& file)
{
    json j;
    j["c"] = gt.c;
    j["d"] = gt.d;
    j["variant_a"] = gt.variant_a;
    j["variant_b"] = gt.variant_b;
    std::ofstream out(file);
    if (!out) throw DataError("cannot write " + file.string());
    out << j.dump() << '\n';
}

GroundTruthMask read_ground_truth(const fs::path& file)
{
    std::ifstream in(file);
    if (!in) throw DataError("ground truth not found: " + file.string());
    try {
        const json j = json::parse(in);
        GroundTruthMask gt;
        gt.c = j.at("c").get<std::size_t>();
        gt.d = j.at("d").get<std::size_t>();
        gt.variant_a = j.at("variant_a").get<std::vector<int>>();
        gt.variant_b = j.at("variant_b").get<std::vector<int>>();
        if (gt.variant_a.size() != gt.c * gt.d || gt.variant_b.size() != gt.c * gt.d)
            throw DataError("ground truth masks do not match C x D in " + file.string());
        return gt;
    } catch (const json::exception& e) {
        throw DataError("malformed ground truth " + file.string() + ": " + e.what());
    }
}

std::optional<GroundTruthMask> find_ground_truth(const fs::path& dataset)
{
    const fs::path file = (fs::is_directory(dataset) ? dataset : dataset.parent_path()) / "ground_truth.json";
    if (!fs::exists(file)) return std::nullopt;
    return read_ground_truth(file);
}

PseudoKind parse_pseudo_kind(const std::string& name)
{
    if (name == "wn") return PseudoKind::wn;
    if (name == "sin") return PseudoKind::sin;
    if (name == "gp") return PseudoKind::gp;
    throw ShapeError("unknown pseudo signal kind '" + name + "' (expected wn, sin or gp)");
}

std::string pseudo_name(PseudoKind kind)
{
    switch (kind) {
    case PseudoKind::wn: return "wn";
    case PseudoKind::sin: return "sin";
    case PseudoKind::gp: return "gp";
    }
    return "?";
}

std::vector<PseudoKind> parse_pseudo_kinds(const std::string& list)
{
    std::vector<PseudoKind> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(parse_pseudo_kind(item));
    return out;
}

double matern32(double r, double ell)
{
    const double z = std::sqrt(3.0) * std::abs(r) / ell;
    return (1.0 + z) * std::exp(-z);
}

namespace {

Eigen::MatrixXd matern_factor(std::size_t t)
{
    Eigen::MatrixXd k(t, t);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) k(i, j) = matern32(double(i) - double(j));
    for (double jitter = 1e-9; jitter <= 1e-1; jitter *= 10.0) {
        Eigen::MatrixXd kj = k;
        kj.diagonal().array() += jitter;
        Eigen::LLT<Eigen::MatrixXd> llt(kj);
        if (llt.info() == Eigen::Success) return llt.matrixL();
    }
    throw std::runtime_error("gp pseudo signal: Cholesky failed after jitter escalation");
}

} // namespace

std::vector<double> gen_pseudo_signal(PseudoKind kind, std::size_t t, std::uint64_t seed)
{
    if (t < 2) throw ShapeError("pseudo signals need T >= 2");
    std::vector<double> out(t);
    Rng rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    switch (kind) {
    case PseudoKind::wn:
        for (double& v : out) v = 0.3 * z(rng);
        break;
    case PseudoKind::sin:
        for (std::size_t s = 0; s < t; ++s) out[s] = std::sin(2.0 * std::numbers::pi * 0.25 * double(s));
        break;
    case PseudoKind::gp: {
        thread_local std::size_t cached_t = 0;
        thread_local Eigen::MatrixXd l;
        if (cached_t != t) {
            l = matern_factor(t);
            cached_t = t;
        }
        Eigen::VectorXd e(t);
        for (std::size_t s = 0; s < t; ++s) e[Eigen::Index(s)] = z(rng);
        const Eigen::VectorXd g = l * e;
        for (std::size_t s = 0; s < t; ++s) out[s] = g[Eigen::Index(s)];
        break;
    }
    }
    return out;
}

MtsDataset inject_pseudo(const MtsDataset& ds, const std::vector<PseudoKind>& kinds, std::uint64_t seed)
{
    if (kinds.empty()) return ds;
    MtsDataset out;
    out.t = ds.t;
    out.d = ds.d + kinds.size();
    out.c = ds.c;
    out.labels = ds.labels;
    out.folds = ds.folds;
    out.split = ds.split;
    out.feature_names = ds.feature_names;
    for (std::size_t k = 0; k < kinds.size(); ++k) {
        std::string name = kPseudoPrefix + pseudo_name(kinds[k]);
        if (std::find(out.feature_names.begin(), out.feature_names.end(), name) != out.feature_names.end())
            name += "_" + std::to_string(k);
        out.feature_names.push_back(name);
    }
    out.values.resize(ds.size() * ds.t * out.d);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < std::ptrdiff_t(ds.size()); ++ii) {
        const auto i = std::size_t(ii);
        for (std::size_t s = 0; s < ds.t; ++s)
            for (std::size_t j = 0; j < ds.d; ++j) out.values[(i * ds.t + s) * out.d + j] = ds.at(i, s, j);
        for (std::size_t k = 0; k < kinds.size(); ++k) {
            const auto sig = gen_pseudo_signal(kinds[k], ds.t, derive_seed(seed, i, 0x9000 + k));
            for (std::size_t s = 0; s < ds.t; ++s)
                out.values[(i * ds.t + s) * out.d + ds.d + k] = quantize_f32(sig[s]);
        }
    }
    return out;
}

std::vector<std::size_t> pseudo_columns(const MtsDataset& ds)
{
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < ds.feature_names.size(); ++j)
        if (ds.feature_names[j].rfind(kPseudoPrefix, 0) == 0) out.push_back(j);
    return out;
}

} // namespace cafo
