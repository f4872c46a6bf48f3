#pragma once

// Series-to-image encoders. Each feature column becomes one square channel.

#include "cafo/dataset.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace cafo {

struct RpConfig {
    std::size_t tau = 1;
    std::size_t m = 1;
    double epsilon_fraction = 0.1;

    /// Side of the recurrence image for a length-t series.
    std::size_t length(std::size_t t) const;
    void validate() const;
};

enum class EncoderKind { rp, gaf };

struct EncoderConfig {
    EncoderKind kind = EncoderKind::rp;
    RpConfig rp;

    std::size_t image_size(std::size_t t) const;
    /// Short stable string naming the encoder and its parameters.
    std::string key() const;
};

EncoderKind parse_encoder(const std::string& name);
std::string encoder_name(EncoderKind kind);

/// Binary L x L recurrence image, row-major. H(0) = 1.
std::vector<double> encode_rp(std::span<const double> series, const RpConfig& cfg = {});
/// Summation field, T x T, row-major. A constant series scales to all zeros.
std::vector<double> encode_gaf(std::span<const double> series);

struct EncodedStack {
    EncoderKind encoder = EncoderKind::rp;
    std::size_t instance = 0;
    std::size_t channels = 0;
    std::size_t side = 0;
    std::vector<double> values; // channels x side x side
};

/// Writes the selected feature channels of instance i into `out`
/// (features.size() * L * L values). Empty `features` means all of them.
void encode_instance_into(const MtsDataset& ds, std::size_t i, const EncoderConfig& cfg,
                          std::span<const std::size_t> features, double* out);
EncodedStack encode_instance(const MtsDataset& ds, std::size_t i, const EncoderConfig& cfg);

/// Calls `sink` once per instance, in order.
void encode_dataset(const MtsDataset& ds, const EncoderConfig& cfg, const std::function<void(EncodedStack&&)>& sink);
std::vector<EncodedStack> encode_dataset(const MtsDataset& ds, const EncoderConfig& cfg);

/// Produces batches of encoded images, either on the fly or from a
/// precomputed f32 table (the on-disk cache). Either way the values are
/// f32-quantised, so both paths give identical batches.
class EncodedSource {
public:
    EncodedSource(const MtsDataset& ds, EncoderConfig cfg, std::vector<std::size_t> features = {});

    /// Uses CAFO_CACHE_DIR when set: loads the cached full encoding of `ds`
    /// or computes and stores it. Falls back to on-the-fly encoding.
    static EncodedSource with_env_cache(const MtsDataset& ds, EncoderConfig cfg,
                                        std::vector<std::size_t> features = {});

    std::size_t channels() const { return features_.size(); }
    std::size_t side() const { return side_; }
    std::size_t image_values() const { return channels() * side_ * side_; }
    bool cached() const { return table_ != nullptr; }

    /// Fills out[n, channels, side, side] for the given instances.
    void batch(std::span<const std::size_t> instances, double* out) const;

private:
    const MtsDataset* ds_;
    EncoderConfig cfg_;
    std::vector<std::size_t> features_;
    std::size_t side_ = 0;
    std::shared_ptr<const std::vector<float>> table_; // N x D x L x L, all features
};

std::filesystem::path cache_path(const std::filesystem::path& dir, const MtsDataset& ds, const EncoderConfig& cfg);
/// Encodes every instance of `ds` into a little-endian f32 file.
void write_encoding_cache(const MtsDataset& ds, const EncoderConfig& cfg, const std::filesystem::path& file);
std::shared_ptr<const std::vector<float>> read_encoding_cache(const MtsDataset& ds, const EncoderConfig& cfg,
                                                              const std::filesystem::path& file);

} // namespace cafo
