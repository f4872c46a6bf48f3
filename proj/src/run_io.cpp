#include "cafo/error.hpp"
#include "cafo/harness.hpp"
#include "cafo/qr_ortho.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace cafo {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

void write_text(const fs::path& file, const std::string& text)
{
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write " + file.string());
    out << text;
    if (!out) throw DataError("short write to " + file.string());
}

json read_json(const fs::path& file)
{
    std::ifstream in(file);
    if (!in) throw DataError("missing file " + file.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed JSON in " + file.string() + ": " + e.what());
    }
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& file)
{
    std::ifstream in(file);
    if (!in) throw DataError("missing file " + file.string());
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) throw DataError("empty file " + file.string());
    return rows;
}

double to_double(const std::string& s, const fs::path& file)
{
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("bad number '" + s + "' in " + file.string());
    }
}

json vec_json(const std::vector<double>& v)
{
    json a = json::array();
    for (double x : v) a.push_back(x);
    return a;
}

} // namespace

void write_run(const RunRecord& run, const TrainConfig& cfg, const fs::path& dir,
               const std::optional<GroundTruthMask>& gt)
{
    fs::create_directories(dir);
    json config = to_json(cfg);
    config["fold"] = run.fold;
    config["lambda"] = run.lambda;
    config["feature_names"] = run.feature_names;
    write_text(dir / "config.json", config.dump(1) + "\n");

    std::string metrics = "epoch,train_loss,train_acc,val_loss,val_acc,mean_abs_r\n";
    for (const auto& e : run.epochs)
        metrics += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.train_acc) + "," +
                   format_double(e.val_loss) + "," + format_double(e.val_acc) + "," + format_double(e.mean_abs_r) +
                   "\n";
    write_text(dir / "metrics.csv", metrics);

    std::string traj = "epoch";
    for (const auto& n : run.feature_names) traj += "," + n;
    traj += "\n";
    for (std::size_t e = 0; e < run.gi_trajectory.size(); ++e) {
        traj += std::to_string(e + 1);
        for (double g : run.gi_trajectory[e]) traj += "," + format_double(g);
        traj += "\n";
    }
    write_text(dir / "gi_trajectory.csv", traj);

    const Tensor& att = run.test_attention;
    {
        std::ofstream out(dir / "attentions_test.bin", std::ios::binary);
        if (!out) throw DataError("cannot write " + (dir / "attentions_test.bin").string());
        out.write(reinterpret_cast<const char*>(att.ptr()), std::streamsize(att.size() * sizeof(double)));
    }
    json am = {{"dtype", "f64le"},
               {"n", att.dim(0)},
               {"d", att.dim(1)},
               {"labels", run.test_labels},
               {"instances", run.test_instances},
               {"feature_names", run.feature_names}};
    write_text(dir / "attentions_test.json", am.dump() + "\n");

    if (run.model) save_checkpoint(*run.model, dir / "checkpoint.bin", {{"fold", run.fold}, {"seed", cfg.seed},
                                                                         {"epoch", run.epochs.size()}});

    json summary = {{"fold", run.fold}, {"lambda", run.lambda}, {"test_acc", run.test_acc},
                    {"mean_abs_r", run.final_mean_abs_r()}};
    if (att.dim(0) > 0) {
        const GiReport gi = run.gi();
        summary["gi"] = vec_json(gi.gi);
        summary["gi_rank"] = gi.rank_desc;
        std::vector<int> classes;
        const Tensor proto = class_prototypes(att, run.test_labels, &classes);
        summary["prototype_classes"] = classes;
        if (proto.dim(0) >= 2) {
            const CwriMatrix cw = cwri(proto);
            summary["cwri"] = vec_json(cw.scores);
            summary["cwri_binarized"] = cw.binarized;
        }
        const FoldScore sc = score_run(run, gt);
        summary["calinski_harabasz"] = sc.calinski_harabasz;
        if (gt) {
            summary["gt_variant"] = std::string(1, sc.agreement.selected);
            summary["f1"] = sc.agreement.best().f1;
            summary["jaccard"] = sc.agreement.best().jaccard;
            summary["iacc"] = sc.agreement.best().iacc;
        }
    }
    write_text(dir / "summary.json", summary.dump(1) + "\n");
}

RunRecord read_run(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw DataError("run directory not found: " + dir.string());
    std::vector<std::string> missing;
    for (const char* f : {"config.json", "metrics.csv", "gi_trajectory.csv", "attentions_test.bin",
                          "attentions_test.json"})
        if (!fs::exists(dir / f)) missing.push_back(f);
    if (!missing.empty()) {
        std::string msg = "run directory " + dir.string() + " is missing:";
        for (const auto& m : missing) msg += " " + m;
        throw DataError(msg);
    }
    RunRecord run;
    const json config = read_json(dir / "config.json");
    run.fold = config.value("fold", -1);
    run.lambda = config.value("lambda", 0.0);
    run.feature_names = config.at("feature_names").get<std::vector<std::string>>();

    const auto mrows = read_csv_rows(dir / "metrics.csv");
    for (std::size_t r = 1; r < mrows.size(); ++r) {
        if (mrows[r].size() != 6) throw DataError("malformed row in " + (dir / "metrics.csv").string());
        EpochStats e;
        e.epoch = std::size_t(to_double(mrows[r][0], dir));
        e.train_loss = to_double(mrows[r][1], dir);
        e.train_acc = to_double(mrows[r][2], dir);
        e.val_loss = to_double(mrows[r][3], dir);
        e.val_acc = to_double(mrows[r][4], dir);
        e.mean_abs_r = to_double(mrows[r][5], dir);
        run.epochs.push_back(e);
    }
    const auto grows = read_csv_rows(dir / "gi_trajectory.csv");
    for (std::size_t r = 1; r < grows.size(); ++r) {
        std::vector<double> g;
        for (std::size_t k = 1; k < grows[r].size(); ++k) g.push_back(to_double(grows[r][k], dir));
        run.gi_trajectory.push_back(std::move(g));
    }
    const json am = read_json(dir / "attentions_test.json");
    const auto n = am.at("n").get<std::size_t>();
    const auto d = am.at("d").get<std::size_t>();
    run.test_labels = am.at("labels").get<std::vector<int>>();
    run.test_instances = am.at("instances").get<std::vector<std::size_t>>();
    run.test_attention = Tensor({n, d});
    std::ifstream in(dir / "attentions_test.bin", std::ios::binary | std::ios::ate);
    if (std::size_t(in.tellg()) != n * d * sizeof(double))
        throw DataError("attentions_test.bin does not match its manifest in " + dir.string());
    in.seekg(0);
    in.read(reinterpret_cast<char*>(run.test_attention.ptr()), std::streamsize(n * d * sizeof(double)));
    if (fs::exists(dir / "summary.json")) run.test_acc = read_json(dir / "summary.json").value("test_acc", 0.0);
    return run;
}

void write_roar(const RoarResult& r, const std::vector<std::string>& names, const fs::path& dir)
{
    fs::create_directories(dir);
    std::string csv = "removed,truth_acc,inverse_acc\n";
    for (std::size_t k = 0; k < r.curve.x.size(); ++k)
        csv += std::to_string(r.curve.x[k]) + "," + format_double(r.curve.truth[k]) + "," +
               format_double(r.curve.inverse[k]) + "\n";
    write_text(dir / "roar_curve.csv", csv);
    std::vector<std::string> ranked;
    for (std::size_t j : r.rank) ranked.push_back(j < names.size() ? names[j] : std::to_string(j));
    json j = {{"abc", r.abc},         {"da", r.da},           {"wda", r.wda},
              {"k_removed", r.k_removed}, {"retrains", r.retrains}, {"gi_rank", r.rank},
              {"gi_rank_names", ranked}, {"abc_x_axis", "fraction of features removed"}};
    write_text(dir / "roar.json", j.dump(1) + "\n");
}

RoarResult read_roar(const fs::path& dir)
{
    RoarResult r;
    const auto rows = read_csv_rows(dir / "roar_curve.csv");
    for (std::size_t k = 1; k < rows.size(); ++k) {
        if (rows[k].size() != 3) throw DataError("malformed row in " + (dir / "roar_curve.csv").string());
        r.curve.x.push_back(std::size_t(to_double(rows[k][0], dir)));
        r.curve.truth.push_back(to_double(rows[k][1], dir));
        r.curve.inverse.push_back(to_double(rows[k][2], dir));
    }
    if (r.curve.x.size() < 2) throw DataError("roar curve in " + dir.string() + " has fewer than two points");
    r.abc = abc(r.curve);
    const std::size_t d = r.curve.x.size();
    r.k_removed = removal_count(d, 0.2);
    const double base = r.curve.truth[0];
    r.da = base > 0.0 ? drop_in_accuracy(base, r.curve.truth[std::min(r.k_removed, d - 1)]) : 0.0;
    r.wda = weighted_drop(base, r.curve.truth);
    r.retrains = 2 * d;
    if (fs::exists(dir / "roar.json")) r.rank = read_json(dir / "roar.json").value("gi_rank", std::vector<std::size_t>{});
    return r;
}

} // namespace cafo
