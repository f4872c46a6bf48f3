#include "cafo/harness.hpp"

#include "cafo/error.hpp"
#include "cafo/kernels.hpp"
#include "cafo/qr_ortho.hpp"
#include "cafo/rng.hpp"
#include "cafo/synthgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cafo {

namespace fs = std::filesystem;
using json = nlohmann::json;

void TrainConfig::validate() const
{
    if (epochs < 1) throw ShapeError("epochs must be >= 1");
    if (batch_size < 1) throw ShapeError("batch size must be >= 1");
    if (eval_batch < 1) throw ShapeError("eval batch must be >= 1");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ShapeError("lambda must be a finite value >= 0");
    if (!(optimizer.lr > 0.0)) throw ShapeError("learning rate must be positive");
    if (folds < 2) throw ShapeError("cross-validation needs at least 2 folds");
    if (jobs < 1) throw ShapeError("jobs must be >= 1");
    if (encoder.kind == EncoderKind::rp) encoder.rp.validate();
    depca.validate();
    if (backbone.blocks.empty()) throw ShapeError("backbone needs at least one conv block");
}

json to_json(const TrainConfig& c)
{
    json blocks = json::array();
    for (const auto& b : c.backbone.blocks) blocks.push_back({b.out_channels, b.kernel, b.stride});
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"lr", c.optimizer.lr},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"eps", c.optimizer.eps},
            {"weight_decay", c.optimizer.weight_decay},
            {"lambda", c.lambda},
            {"seed", c.seed},
            {"encoder", encoder_name(c.encoder.kind)},
            {"rp_tau", c.encoder.rp.tau},
            {"rp_m", c.encoder.rp.m},
            {"rp_eps_frac", c.encoder.rp.epsilon_fraction},
            {"depca_gamma", c.depca.gamma},
            {"depca_kernel", c.depca.kernel},
            {"depca_stride", c.depca.stride},
            {"depca_pad", c.depca.pad},
            {"backbone_blocks", blocks},
            {"hidden", c.backbone.hidden},
            {"folds", c.folds},
            {"jobs", c.jobs},
            {"threads", c.threads},
            {"eval_batch", c.eval_batch}};
}

void apply_json(TrainConfig& c, const json& j)
{
    if (!j.is_object()) throw ShapeError("train config must be a JSON object");
    for (const auto& [key, v] : j.items()) {
        if (key == "epochs") c.epochs = v.get<std::size_t>();
        else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
        else if (key == "lr") c.optimizer.lr = v.get<double>();
        else if (key == "beta1") c.optimizer.beta1 = v.get<double>();
        else if (key == "beta2") c.optimizer.beta2 = v.get<double>();
        else if (key == "eps") c.optimizer.eps = v.get<double>();
        else if (key == "weight_decay") c.optimizer.weight_decay = v.get<double>();
        else if (key == "lambda") c.lambda = v.get<double>();
        else if (key == "seed") c.seed = v.get<std::uint64_t>();
        else if (key == "encoder") c.encoder.kind = parse_encoder(v.get<std::string>());
        else if (key == "rp_tau") c.encoder.rp.tau = v.get<std::size_t>();
        else if (key == "rp_m") c.encoder.rp.m = v.get<std::size_t>();
        else if (key == "rp_eps_frac") c.encoder.rp.epsilon_fraction = v.get<double>();
        else if (key == "depca_gamma") c.depca.gamma = v.get<std::size_t>();
        else if (key == "depca_kernel") c.depca.kernel = v.get<std::size_t>();
        else if (key == "depca_stride") c.depca.stride = v.get<std::size_t>();
        else if (key == "depca_pad") c.depca.pad = v.get<long>();
        else if (key == "backbone_blocks") {
            c.backbone.blocks.clear();
            for (const auto& b : v) {
                const auto t = b.get<std::vector<std::size_t>>();
                if (t.size() != 3) throw ShapeError("backbone block must be [out_channels, kernel, stride]");
                c.backbone.blocks.push_back({t[0], t[1], t[2]});
            }
        }
        else if (key == "hidden") c.backbone.hidden = v.get<std::size_t>();
        else if (key == "folds") c.folds = v.get<std::size_t>();
        else if (key == "jobs") c.jobs = v.get<std::size_t>();
        else if (key == "threads") c.threads = v.get<int>();
        else if (key == "eval_batch") c.eval_batch = v.get<std::size_t>();
        else throw ShapeError("unknown train config key '" + key + "'");
    }
}

Tensor RunRecord::test_prototypes() const { return class_prototypes(test_attention, test_labels); }

Split3 make_fold_split(const MtsDataset& ds, int fold, std::size_t folds)
{
    if (fold < 0 || std::size_t(fold) >= folds) throw ShapeError("fold id out of range");
    Split3 s;
    s.test = ds.indices(Split::test);
    const bool native = ds.num_folds() == folds;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.split[i] != Split::train) continue;
        const int f = native ? ds.folds[i] : int(pos % folds);
        ++pos;
        (f == fold ? s.val : s.train).push_back(i);
    }
    if (s.val.empty()) throw DataError("fold " + std::to_string(fold) + " has no instances");
    if (s.train.empty()) throw DataError("no training instances outside fold " + std::to_string(fold));
    return s;
}

namespace {

std::size_t argmax_row(const Tensor& logits, std::size_t r)
{
    const std::size_t c = logits.dim(1);
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
        if (logits.at(r, k) > logits.at(r, best)) best = k;
    return best;
}

Tensor gather_batch(const EncodedSource& src, std::span<const std::size_t> idx, std::vector<double>& buf)
{
    const std::size_t per = src.image_values();
    buf.resize(idx.size() * per);
    src.batch(idx, buf.data());
    return Tensor({idx.size(), src.channels(), src.side(), src.side()}, buf);
}

std::vector<int> gather_labels(const MtsDataset& ds, std::span<const std::size_t> idx)
{
    std::vector<int> y(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) y[k] = ds.labels[idx[k]];
    return y;
}

double prototype_mean_abs_r(const Tensor& attention, std::span<const int> labels)
{
    if (attention.dim(1) < 2) return 0.0;
    return qr_ortho_loss(class_prototypes(attention, labels));
}

} // namespace

EvalResult evaluate(const CafoModel& model, const EncodedSource& src, const MtsDataset& ds,
                    std::span<const std::size_t> idx, std::size_t batch)
{
    ag::NoGradGuard ng;
    EvalResult r;
    r.attention = Tensor({idx.size(), src.channels()});
    std::vector<double> buf;
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < idx.size(); start += batch) {
        const auto part = idx.subspan(start, std::min(batch, idx.size() - start));
        const auto labels = gather_labels(ds, part);
        const auto out = model.forward(ag::constant(gather_batch(src, part, buf)));
        loss += ag::softmax_cross_entropy(out.logits, labels).value().item() * double(part.size());
        const Tensor& lg = out.logits.value();
        const Tensor& at = out.attention.value();
        for (std::size_t k = 0; k < part.size(); ++k) {
            if (int(argmax_row(lg, k)) == labels[k]) ++correct;
            std::copy_n(at.ptr() + k * src.channels(), src.channels(), r.attention.ptr() + (start + k) * src.channels());
        }
    }
    if (!idx.empty()) {
        r.loss = loss / double(idx.size());
        r.acc = double(correct) / double(idx.size());
    }
    return r;
}

RunRecord train(const MtsDataset& ds, const TrainConfig& cfg, const Split3& split,
                const std::vector<std::size_t>& features)
{
    cfg.validate();
    if (split.train.empty()) throw DataError("training split is empty");
    const EncodedSource src = EncodedSource::with_env_cache(ds, cfg.encoder, features);
    ModelConfig mc;
    mc.channels = src.channels();
    mc.side = src.side();
    mc.depca = cfg.depca;
    mc.backbone = cfg.backbone;
    mc.backbone.classes = ds.c;
    CafoModel model(mc, cfg.seed);
    AdamW opt(cfg.optimizer);

    RunRecord rec;
    rec.lambda = cfg.lambda;
    if (features.empty()) rec.feature_names = ds.feature_names;
    else
        for (std::size_t j : features) rec.feature_names.push_back(ds.feature_names[j]);

    std::vector<std::size_t> order = split.train;
    std::vector<double> buf;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, 0xE90C, epoch));
        std::shuffle(order.begin(), order.end(), rng);
        EpochStats st;
        st.epoch = epoch;
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        int bad = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const auto part = std::span<const std::size_t>(order).subspan(
                start, std::min(cfg.batch_size, order.size() - start));
            const auto labels = gather_labels(ds, part);
            try {
                const auto out = model.forward(ag::constant(gather_batch(src, part, buf)));
                const ag::Var loss = total_loss(out.logits, out.attention, labels, cfg.lambda);
                opt.zero_grad(model.params());
                ag::backward(loss);
                for (const auto& p : model.params())
                    if (p.has_grad()) require_finite(p.grad(), "gradient");
                opt.step(model.params());
                bad = 0;
                loss_sum += loss.value().item() * double(part.size());
                for (std::size_t k = 0; k < part.size(); ++k)
                    if (int(argmax_row(out.logits.value(), k)) == labels[k]) ++correct;
                seen += part.size();
            } catch (const NonFiniteError& e) {
                opt.zero_grad(model.params());
                if (++bad >= 3)
                    throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                             " (3 consecutive non-finite batches): " + e.what());
            }
        }
        if (seen > 0) {
            st.train_loss = loss_sum / double(seen);
            st.train_acc = double(correct) / double(seen);
        }
        if (!split.val.empty()) {
            const EvalResult ev = evaluate(model, src, ds, split.val, cfg.eval_batch);
            const auto labels = gather_labels(ds, split.val);
            st.val_loss = ev.loss;
            st.val_acc = ev.acc;
            st.mean_abs_r = prototype_mean_abs_r(ev.attention, labels);
            rec.gi_trajectory.push_back(global_importance(ev.attention).gi);
        }
        rec.epochs.push_back(st);
    }
    rec.test_instances = split.test;
    rec.test_labels = gather_labels(ds, split.test);
    if (!split.test.empty()) {
        const EvalResult ev = evaluate(model, src, ds, split.test, cfg.eval_batch);
        rec.test_attention = ev.attention;
        rec.test_acc = ev.acc;
    } else {
        rec.test_attention = Tensor({0, src.channels()});
    }
    rec.model = std::move(model);
    return rec;
}

void run_tasks(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task)
{
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex m;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(jobs, n); ++w)
        pool.emplace_back([&] {
#ifdef _OPENMP
            omp_set_num_threads(1);
#endif
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard lock(m);
                    if (!failure) failure = std::current_exception();
                    next = n;
                }
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

std::vector<RunRecord> cross_validate(const MtsDataset& ds, const TrainConfig& cfg,
                                      const std::optional<fs::path>& out, const std::optional<GroundTruthMask>& gt)
{
    cfg.validate();
    if (cfg.threads > 0) kernels::set_threads(cfg.threads);
    std::vector<RunRecord> runs(cfg.folds);
    std::vector<Split3> splits;
    for (std::size_t f = 0; f < cfg.folds; ++f) splits.push_back(make_fold_split(ds, int(f), cfg.folds));
    run_tasks(cfg.folds, cfg.jobs, [&](std::size_t f) {
        runs[f] = train(ds, cfg, splits[f]);
        runs[f].fold = int(f);
        if (out) write_run(runs[f], cfg, *out / ("fold_" + std::to_string(f)), gt);
    });
    return runs;
}

std::vector<std::size_t> mean_gi_rank(const std::vector<RunRecord>& runs)
{
    if (runs.empty()) throw ShapeError("mean_gi_rank: no runs");
    std::vector<double> mean;
    for (const auto& r : runs) {
        const auto gi = r.gi().gi;
        if (mean.empty()) mean.assign(gi.size(), 0.0);
        if (gi.size() != mean.size()) throw ShapeError("mean_gi_rank: runs disagree on D");
        for (std::size_t j = 0; j < gi.size(); ++j) mean[j] += gi[j] / double(runs.size());
    }
    return rank_descending(mean);
}

RoarResult roar(const MtsDataset& ds, const TrainConfig& cfg, const std::vector<std::size_t>& rank,
                const std::optional<fs::path>& out)
{
    cfg.validate();
    if (cfg.threads > 0) kernels::set_threads(cfg.threads);
    const std::size_t d = ds.d;
    {
        std::vector<std::size_t> sorted = rank;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t k = 0; k < sorted.size(); ++k)
            if (sorted.size() != d || sorted[k] != k) throw ShapeError("roar: GI rank is not a permutation of 0..D-1");
    }
    if (d < 2) throw ShapeError("roar needs at least two features");
    Split3 split;
    split.train = ds.indices(Split::train);
    split.test = ds.indices(Split::test);
    if (split.test.empty()) throw DataError("roar needs a test split");

    RoarResult res;
    res.rank = rank;
    res.curve.x.resize(d);
    std::iota(res.curve.x.begin(), res.curve.x.end(), 0);
    res.curve.truth.assign(d, 0.0);
    res.curve.inverse.assign(d, 0.0);
    std::vector<std::size_t> reversed(rank.rbegin(), rank.rend());
    run_tasks(2 * d, cfg.jobs, [&](std::size_t task) {
        const bool inverse = task % 2 == 1;
        const std::size_t removed = task / 2;
        const auto& order = inverse ? reversed : rank;
        std::vector<std::size_t> keep(order.begin() + std::ptrdiff_t(removed), order.end());
        std::sort(keep.begin(), keep.end());
        const RunRecord r = train(ds, cfg, split, keep);
        (inverse ? res.curve.inverse : res.curve.truth)[removed] = r.test_acc;
    });
    res.retrains = 2 * d;
    res.abc = abc(res.curve);
    res.k_removed = removal_count(d, 0.2);
    const double base = res.curve.truth[0];
    res.da = base > 0.0 ? drop_in_accuracy(base, res.curve.truth[std::min(res.k_removed, d - 1)]) : 0.0;
    res.wda = weighted_drop(base, res.curve.truth);
    if (out) write_roar(res, ds.feature_names, *out);
    return res;
}

bool pseudo_in_bottom(const GiReport& gi, std::span<const std::size_t> pseudo, double fraction)
{
    const std::size_t d = gi.rank_desc.size();
    const auto bottom = std::size_t(std::ceil(fraction * double(d) - 1e-9));
    const auto pos = positions_from_order(gi.rank_desc);
    for (std::size_t j : pseudo)
        if (pos.at(j) < double(d - bottom)) return false;
    return true;
}

PseudoResult pseudo_experiment(const MtsDataset& ds, const TrainConfig& cfg, const std::vector<PseudoKind>& kinds,
                               double fraction, const std::optional<fs::path>& out)
{
    const MtsDataset aug = inject_pseudo(ds, kinds, derive_seed(cfg.seed, 0x95E0));
    PseudoResult res;
    res.pseudo_columns = pseudo_columns(aug);
    res.runs = cross_validate(aug, cfg, out);
    for (const auto& r : res.runs) res.bottom.push_back(pseudo_in_bottom(r.gi(), res.pseudo_columns, fraction));
    return res;
}

FoldScore score_run(const RunRecord& run, const std::optional<GroundTruthMask>& gt)
{
    FoldScore s;
    s.test_acc = run.test_acc;
    s.mean_abs_r = run.final_mean_abs_r();
    const std::size_t n = run.test_labels.size();
    if (n == 0) return s;
    std::vector<int> classes;
    const Tensor proto = class_prototypes(run.test_attention, run.test_labels, &classes);
    if (classes.size() >= 2 && n > classes.size())
        s.calinski_harabasz = calinski_harabasz(run.test_attention, run.test_labels);
    if (gt && classes.size() == gt->c && proto.dim(1) == gt->d)
        s.agreement = gt_agreement(cwri(proto).binarized, *gt);
    return s;
}

std::vector<SweepRow> lambda_sweep(const MtsDataset& ds, const TrainConfig& cfg, const std::vector<double>& lambdas,
                                   const std::optional<GroundTruthMask>& gt, const std::optional<fs::path>& out)
{
    if (lambdas.empty()) throw ShapeError("lambda sweep needs at least one value");
    std::vector<SweepRow> rows;
    for (double lambda : lambdas) {
        TrainConfig c = cfg;
        c.lambda = lambda;
        std::optional<fs::path> dir;
        if (out) dir = *out / ("lambda_" + format_double(lambda));
        const auto runs = cross_validate(ds, c, dir, gt);
        SweepRow row;
        row.lambda = lambda;
        std::vector<std::vector<double>> positions;
        for (const auto& r : runs) {
            const FoldScore sc = score_run(r, gt);
            const double k = double(runs.size());
            row.acc += sc.test_acc / k;
            row.f1 += sc.agreement.best().f1 / k;
            row.jaccard += sc.agreement.best().jaccard / k;
            row.iacc += sc.agreement.best().iacc / k;
            row.mean_abs_r += sc.mean_abs_r / k;
            positions.push_back(positions_from_order(r.gi().rank_desc));
        }
        const RankCorrelation rc = rank_correlations(positions);
        row.spearman = rc.spearman;
        row.kendall = rc.kendall;
        rows.push_back(row);
    }
    return rows;
}

} // namespace cafo
