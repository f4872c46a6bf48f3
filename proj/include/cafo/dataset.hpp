#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace cafo {

enum class Split : std::uint8_t { train, test };

/// N labelled multivariate series sharing one T x D shape. Values are stored
/// instance-major, each instance row-major (row = time step).
struct MtsDataset {
    std::size_t t = 0;
    std::size_t d = 0;
    std::size_t c = 0;
    std::vector<double> values;
    std::vector<int> labels;
    std::vector<int> folds;
    std::vector<Split> split;
    std::vector<std::string> feature_names;

    std::size_t size() const { return labels.size(); }
    std::size_t num_folds() const;

    std::span<const double> instance(std::size_t i) const { return {values.data() + i * t * d, t * d}; }
    double at(std::size_t i, std::size_t step, std::size_t feature) const
    {
        return values[(i * t + step) * d + feature];
    }
    /// Feature column j of instance i as a length-T series.
    std::vector<double> series(std::size_t i, std::size_t feature) const;

    std::vector<std::size_t> indices(Split s) const;
    std::vector<std::size_t> fold_indices(int fold) const;

    /// Throws DataError if any structural invariant is broken.
    void validate() const;
};

/// Keeps only the listed feature columns, in the given order.
MtsDataset select_features(const MtsDataset& ds, std::span<const std::size_t> keep);

/// Shuffles instances into a held-out test split and `folds` round-robin
/// cross-validation folds over the rest. Deterministic in `seed`.
void assign_splits(MtsDataset& ds, std::size_t folds, double test_fraction, std::uint64_t seed);

/// FNV-1a over shape, labels and f32-quantised values, as 16 hex digits.
std::string dataset_hash(const MtsDataset& ds);

/// Binary format: manifest.json + data.bin (little-endian f32).
void write_dataset(const MtsDataset& ds, const std::filesystem::path& dir);
MtsDataset read_dataset(const std::filesystem::path& dir);

/// CSV with header `instance_id,t,label,f0..f{D-1}`, rows grouped by
/// instance with t ascending from 0. All instances are marked train, fold 0.
MtsDataset read_csv(const std::filesystem::path& path);

/// Dispatches on the path: a `.csv` file or a dataset directory.
MtsDataset load_dataset(const std::filesystem::path& path, std::size_t folds = 5, std::uint64_t seed = 42);

inline double quantize_f32(double v) { return double(float(v)); }

} // namespace cafo
