#pragma once

#include "cafo/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cafo {

struct SquidGameConfig {
    std::size_t n_per_class = 18000;
    std::size_t t = 32;
    std::size_t d = 30;
    std::uint64_t seed = 42;
    double noise_sigma = 0.2;
    double amplitude = 1.0;
    double freq_lo = 0.1;
    double freq_hi = 0.45;
    double size_lo = 2.0;
    double size_hi = 4.0;
    std::size_t folds = 5;
    double test_fraction = 0.2;

    void validate() const;
};

/// Two C x D binary importance patterns (row-major, 1 = important).
struct GroundTruthMask {
    std::size_t c = 0;
    std::size_t d = 0;
    std::vector<int> variant_a;
    std::vector<int> variant_b;
};

struct SquidGame {
    MtsDataset data;
    GroundTruthMask truth;
};

/// Three classes; feature group c (d/3 columns) of a class-c instance holds a
/// shape mask (0 circle, 1 triangle, 2 square) filled with a sinusoid, all
/// other cells are Gaussian noise.
SquidGame gen_squidgame(const SquidGameConfig& cfg);

/// Mask of the shape for one instance, T x group row-major. Exposed for tests.
std::vector<int> shape_mask(int shape, std::size_t t, std::size_t width, double center_t, double center_f,
                            double size);

void write_ground_truth(const GroundTruthMask& gt, const std::filesystem::path& file);
GroundTruthMask read_ground_truth(const std::filesystem::path& file);
/// Reads `ground_truth.json` next to a dataset, if present.
std::optional<GroundTruthMask> find_ground_truth(const std::filesystem::path& dataset);

enum class PseudoKind { wn, sin, gp };

PseudoKind parse_pseudo_kind(const std::string& name);
std::string pseudo_name(PseudoKind kind);
std::vector<PseudoKind> parse_pseudo_kinds(const std::string& comma_list);

/// wn: N(0, 0.3^2). sin: sin(2 pi 0.25 t), t = 0..T-1. gp: Matern-3/2
/// process (length-scale 1, unit variance) on the integer grid.
std::vector<double> gen_pseudo_signal(PseudoKind kind, std::size_t t, std::uint64_t seed);

/// Matern nu = 3/2 kernel value at distance r.
double matern32(double r, double length_scale = 1.0);

/// Appends one column per kind with fresh draws for every instance.
MtsDataset inject_pseudo(const MtsDataset& ds, const std::vector<PseudoKind>& kinds, std::uint64_t seed);

/// Indices of feature columns whose name marks them as injected.
std::vector<std::size_t> pseudo_columns(const MtsDataset& ds);

} // namespace cafo
