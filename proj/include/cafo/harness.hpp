#pragma once

// Training loop, cross-validation, remove-and-retrain, pseudo-signal runs and
// lambda sweeps.

#include "cafo/dataset.hpp"
#include "cafo/encode.hpp"
#include "cafo/metrics.hpp"
#include "cafo/model.hpp"
#include "cafo/optim.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cafo {

struct TrainConfig {
    std::size_t epochs = 5;
    std::size_t batch_size = 64;
    AdamWConfig optimizer;
    double lambda = 1.0;
    std::uint64_t seed = 42;
    EncoderConfig encoder;
    DepCaConfig depca;
    BackboneConfig backbone;
    std::size_t folds = 5;
    /// Independent runs executed at once by cv/roar/sweep.
    std::size_t jobs = 1;
    /// OpenMP threads for the kernels; 0 keeps the runtime default.
    int threads = 0;
    std::size_t eval_batch = 256;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
/// Applies the keys present in `j` on top of `cfg`; unknown keys throw.
void apply_json(TrainConfig& cfg, const nlohmann::json& j);

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    /// Mean |R_ij| (i < j) of the validation prototypes.
    double mean_abs_r = 0.0;
};

struct RunRecord {
    int fold = -1;
    double lambda = 0.0;
    std::vector<std::string> feature_names;
    std::vector<EpochStats> epochs;
    /// Validation GI per epoch, epochs x D.
    std::vector<std::vector<double>> gi_trajectory;
    std::vector<std::size_t> test_instances;
    std::vector<int> test_labels;
    Tensor test_attention; // N_test x D
    double test_acc = 0.0;
    std::optional<CafoModel> model;

    GiReport gi() const { return global_importance(test_attention); }
    /// C x D class prototypes of the test attention vectors.
    Tensor test_prototypes() const;
    double final_mean_abs_r() const { return epochs.empty() ? 0.0 : epochs.back().mean_abs_r; }
};

struct Split3 {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
};

/// Fold `fold` as validation, the other train-split folds as training data.
Split3 make_fold_split(const MtsDataset& ds, int fold, std::size_t folds);

/// `features` restricts the encoder to those columns (empty = all).
RunRecord train(const MtsDataset& ds, const TrainConfig& cfg, const Split3& split,
                const std::vector<std::size_t>& features = {});

/// Evaluates a model: fills logits-based accuracy and attention rows.
struct EvalResult {
    double loss = 0.0;
    double acc = 0.0;
    Tensor attention;
};
EvalResult evaluate(const CafoModel& model, const EncodedSource& src, const MtsDataset& ds,
                    std::span<const std::size_t> idx, std::size_t batch);

/// Runs `n` independent tasks with up to `jobs` at a time.
void run_tasks(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task);

/// One run per fold; writes run dirs under `out` when given.
std::vector<RunRecord> cross_validate(const MtsDataset& ds, const TrainConfig& cfg,
                                      const std::optional<std::filesystem::path>& out = std::nullopt,
                                      const std::optional<GroundTruthMask>& gt = std::nullopt);

/// Averages per-fold GI, then ranks descending.
std::vector<std::size_t> mean_gi_rank(const std::vector<RunRecord>& runs);

struct RoarResult {
    RoarCurve curve;
    std::vector<std::size_t> rank;
    double abc = 0.0;
    double da = 0.0;
    double wda = 0.0;
    std::size_t k_removed = 0;
    std::size_t retrains = 0;
};

/// Trains on the full train split with the top-d features removed (both
/// orderings), scores on the test split.
RoarResult roar(const MtsDataset& ds, const TrainConfig& cfg, const std::vector<std::size_t>& gi_rank,
                const std::optional<std::filesystem::path>& out = std::nullopt);

struct PseudoResult {
    std::vector<std::size_t> pseudo_columns;
    std::vector<RunRecord> runs;
    /// Per run: true when every pseudo feature sits in the bottom `fraction`
    /// of the final GI ranking.
    std::vector<bool> bottom;
};

PseudoResult pseudo_experiment(const MtsDataset& ds, const TrainConfig& cfg, const std::vector<PseudoKind>& kinds,
                               double bottom_fraction = 0.2,
                               const std::optional<std::filesystem::path>& out = std::nullopt);
bool pseudo_in_bottom(const GiReport& gi, std::span<const std::size_t> pseudo, double fraction);

struct FoldScore {
    double test_acc = 0.0;
    GtAgreement agreement;
    double mean_abs_r = 0.0;
    double calinski_harabasz = 0.0;
};
FoldScore score_run(const RunRecord& run, const std::optional<GroundTruthMask>& gt);

struct SweepRow {
    double lambda = 0.0;
    double acc = 0.0;
    double f1 = 0.0;
    double jaccard = 0.0;
    double iacc = 0.0;
    double spearman = 0.0;
    double kendall = 0.0;
    double mean_abs_r = 0.0;
};

std::vector<SweepRow> lambda_sweep(const MtsDataset& ds, const TrainConfig& cfg, const std::vector<double>& lambdas,
                                   const std::optional<GroundTruthMask>& gt,
                                   const std::optional<std::filesystem::path>& out = std::nullopt);

// ---- run directories -------------------------------------------------------

void write_run(const RunRecord& run, const TrainConfig& cfg, const std::filesystem::path& dir,
               const std::optional<GroundTruthMask>& gt = std::nullopt);
/// Reads back what write_run produced (no model).
RunRecord read_run(const std::filesystem::path& dir);
void write_roar(const RoarResult& r, const std::vector<std::string>& names, const std::filesystem::path& dir);
RoarResult read_roar(const std::filesystem::path& dir);

/// Row-wise CSV with %.17g formatting.
std::string format_double(double v);

} // namespace cafo
