#include "cafo/encode.hpp"

#include "cafo/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>

namespace cafo {

namespace fs = std::filesystem;

std::size_t RpConfig::length(std::size_t t) const
{
    const std::size_t span = (m - 1) * tau;
    return t > span ? t - span : 0;
}

void RpConfig::validate() const
{
    if (tau < 1) throw ShapeError("rp tau must be >= 1");
    if (m < 1) throw ShapeError("rp m must be >= 1");
    if (!(epsilon_fraction > 0.0 && epsilon_fraction <= 1.0))
        throw ShapeError("rp epsilon fraction must lie in (0, 1]");
}

std::size_t EncoderConfig::image_size(std::size_t t) const
{
    return kind == EncoderKind::rp ? rp.length(t) : t;
}

std::string EncoderConfig::key() const
{
    if (kind == EncoderKind::gaf) return "gaf";
    char buf[96];
    std::snprintf(buf, sizeof buf, "rp_tau%zu_m%zu_eps%.17g", rp.tau, rp.m, rp.epsilon_fraction);
    return buf;
}

EncoderKind parse_encoder(const std::string& name)
{
    if (name == "rp") return EncoderKind::rp;
    if (name == "gaf") return EncoderKind::gaf;
    throw ShapeError("unknown encoder '" + name + "' (expected rp or gaf)");
}

std::string encoder_name(EncoderKind kind) { return kind == EncoderKind::rp ? "rp" : "gaf"; }

namespace {

void check_finite(std::span<const double> s, const char* where)
{
    for (double v : s)
        if (!std::isfinite(v)) throw NonFiniteError(std::string(where) + ": non-finite input value");
}

void rp_into(std::span<const double> x, const RpConfig& cfg, double* out)
{
    const std::size_t l = cfg.length(x.size());
    if (l < 2) throw ShapeError("encode_rp: series of length " + std::to_string(x.size()) + " too short for tau=" +
                                std::to_string(cfg.tau) + ", m=" + std::to_string(cfg.m));
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < cfg.m; ++k) {
            const double diff = x[i + k * cfg.tau] - x[j + k * cfg.tau];
            s += diff * diff;
        }
        return std::sqrt(s);
    };
    double dmax = 0.0;
    for (std::size_t i = 0; i < l; ++i)
        for (std::size_t j = i + 1; j < l; ++j) dmax = std::max(dmax, dist(i, j));
    const double eps = cfg.epsilon_fraction * dmax;
    for (std::size_t i = 0; i < l; ++i) {
        out[i * l + i] = 1.0;
        for (std::size_t j = i + 1; j < l; ++j) {
            const double v = eps - dist(i, j) >= 0.0 ? 1.0 : 0.0;
            out[i * l + j] = v;
            out[j * l + i] = v;
        }
    }
}

void gaf_into(std::span<const double> x, double* out)
{
    const std::size_t t = x.size();
    if (t < 1) throw ShapeError("encode_gaf: empty series");
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    const double range = *hi - *lo;
    std::vector<double> c(t), s(t);
    for (std::size_t i = 0; i < t; ++i) {
        double v = range > 0.0 ? (2.0 * x[i] - *hi - *lo) / range : 0.0;
        v = std::clamp(v, -1.0, 1.0);
        c[i] = v;
        s[i] = std::sqrt(std::max(0.0, 1.0 - v * v));
    }
    // cos(a + b) with cos a = c, sin a = s (arccos lands in [0, pi])
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) out[i * t + j] = quantize_f32(c[i] * c[j] - s[i] * s[j]);
}

} // namespace

std::vector<double> encode_rp(std::span<const double> series, const RpConfig& cfg)
{
    cfg.validate();
    check_finite(series, "encode_rp");
    const std::size_t l = cfg.length(series.size());
    std::vector<double> out(l * l);
    rp_into(series, cfg, out.data());
    return out;
}

std::vector<double> encode_gaf(std::span<const double> series)
{
    check_finite(series, "encode_gaf");
    std::vector<double> out(series.size() * series.size());
    gaf_into(series, out.data());
    return out;
}

void encode_instance_into(const MtsDataset& ds, std::size_t i, const EncoderConfig& cfg,
                          std::span<const std::size_t> features, double* out)
{
    const std::size_t side = cfg.image_size(ds.t);
    const std::size_t area = side * side;
    const std::size_t n = features.empty() ? ds.d : features.size();
    std::vector<double> series(ds.t);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = features.empty() ? k : features[k];
        for (std::size_t s = 0; s < ds.t; ++s) series[s] = ds.at(i, s, j);
        check_finite(series, "encode");
        if (cfg.kind == EncoderKind::rp) rp_into(series, cfg.rp, out + k * area);
        else gaf_into(series, out + k * area);
    }
}

EncodedStack encode_instance(const MtsDataset& ds, std::size_t i, const EncoderConfig& cfg)
{
    if (cfg.kind == EncoderKind::rp) cfg.rp.validate();
    EncodedStack st;
    st.encoder = cfg.kind;
    st.instance = i;
    st.channels = ds.d;
    st.side = cfg.image_size(ds.t);
    st.values.resize(st.channels * st.side * st.side);
    encode_instance_into(ds, i, cfg, {}, st.values.data());
    return st;
}

void encode_dataset(const MtsDataset& ds, const EncoderConfig& cfg, const std::function<void(EncodedStack&&)>& sink)
{
    if (ds.values.size() != ds.size() * ds.t * ds.d) throw ShapeError("encode_dataset: heterogeneous instance shapes");
    for (std::size_t i = 0; i < ds.size(); ++i) sink(encode_instance(ds, i, cfg));
}

std::vector<EncodedStack> encode_dataset(const MtsDataset& ds, const EncoderConfig& cfg)
{
    std::vector<EncodedStack> out;
    out.reserve(ds.size());
    encode_dataset(ds, cfg, [&out](EncodedStack&& s) { out.push_back(std::move(s)); });
    return out;
}

// ---- source ---------------------------------------------------------------

EncodedSource::EncodedSource(const MtsDataset& ds, EncoderConfig cfg, std::vector<std::size_t> features)
    : ds_(&ds), cfg_(cfg), features_(std::move(features))
{
    if (cfg_.kind == EncoderKind::rp) cfg_.rp.validate();
    if (features_.empty()) {
        features_.resize(ds.d);
        std::iota(features_.begin(), features_.end(), 0);
    }
    for (std::size_t j : features_)
        if (j >= ds.d) throw ShapeError("encoder feature index " + std::to_string(j) + " out of range");
    side_ = cfg_.image_size(ds.t);
    if (side_ < 1 || (cfg_.kind == EncoderKind::rp && side_ < 2))
        throw ShapeError("series length " + std::to_string(ds.t) + " too short for the encoder");
}

EncodedSource EncodedSource::with_env_cache(const MtsDataset& ds, EncoderConfig cfg, std::vector<std::size_t> features)
{
    EncodedSource src(ds, cfg, std::move(features));
    const char* dir = std::getenv("CAFO_CACHE_DIR");
    if (dir == nullptr || *dir == '\0') return src;
    const fs::path file = cache_path(dir, ds, src.cfg_);
    if (!fs::exists(file)) {
        fs::create_directories(dir);
        write_encoding_cache(ds, src.cfg_, file);
    }
    src.table_ = read_encoding_cache(ds, src.cfg_, file);
    return src;
}

void EncodedSource::batch(std::span<const std::size_t> instances, double* out) const
{
    const std::size_t area = side_ * side_;
    const std::size_t per = image_values();
    const auto n = std::ptrdiff_t(instances.size());
    if (table_) {
        const std::size_t full = ds_->d * area;
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t b = 0; b < n; ++b) {
            const float* src = table_->data() + instances[std::size_t(b)] * full;
            double* dst = out + std::size_t(b) * per;
            for (std::size_t k = 0; k < features_.size(); ++k)
                std::copy(src + features_[k] * area, src + (features_[k] + 1) * area, dst + k * area);
        }
        return;
    }
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t b = 0; b < n; ++b)
        encode_instance_into(*ds_, instances[std::size_t(b)], cfg_, features_, out + std::size_t(b) * per);
}

fs::path cache_path(const fs::path& dir, const MtsDataset& ds, const EncoderConfig& cfg)
{
    return dir / (dataset_hash(ds) + "_d" + std::to_string(ds.d) + "_" + cfg.key() + ".f32");
}

void write_encoding_cache(const MtsDataset& ds, const EncoderConfig& cfg, const fs::path& file)
{
    const std::size_t side = cfg.image_size(ds.t);
    const std::size_t per = ds.d * side * side;
    const fs::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot write encoding cache " + tmp.string());
        std::vector<double> buf(per);
        std::vector<float> row(per);
        for (std::size_t i = 0; i < ds.size(); ++i) {
            encode_instance_into(ds, i, cfg, {}, buf.data());
            std::transform(buf.begin(), buf.end(), row.begin(), [](double v) { return float(v); });
            out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(per * sizeof(float)));
        }
        if (!out) throw DataError("short write to encoding cache " + tmp.string());
    }
    fs::rename(tmp, file);
}

std::shared_ptr<const std::vector<float>> read_encoding_cache(const MtsDataset& ds, const EncoderConfig& cfg,
                                                              const fs::path& file)
{
    const std::size_t side = cfg.image_size(ds.t);
    const std::size_t expected = ds.size() * ds.d * side * side;
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("encoding cache not found: " + file.string());
    if (std::size_t(in.tellg()) != expected * sizeof(float))
        throw DataError("encoding cache " + file.string() + " has the wrong size");
    auto table = std::make_shared<std::vector<float>>(expected);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(table->data()), std::streamsize(expected * sizeof(float)));
    if (!in) throw DataError("short read from encoding cache " + file.string());
    return table;
}

} // namespace cafo
