#include "cafo/report.hpp"

#include "cafo/error.hpp"
#include "cafo/qr_ortho.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace cafo {

namespace fs = std::filesystem;
using json = nlohmann::json;

ReportInputs collect_report_inputs(const std::vector<fs::path>& paths)
{
    ReportInputs in;
    std::vector<std::string> problems;
    for (const auto& p : paths) {
        if (!fs::is_directory(p)) {
            problems.push_back(p.string() + " (not a directory)");
            continue;
        }
        bool used = false;
        if (fs::exists(p / "config.json")) {
            in.runs.push_back(p);
            used = true;
        }
        if (fs::exists(p / "roar_curve.csv")) {
            in.roar = p;
            used = true;
        }
        std::vector<fs::path> folds;
        for (const auto& e : fs::directory_iterator(p))
            if (e.is_directory() && e.path().filename().string().rfind("fold_", 0) == 0 &&
                fs::exists(e.path() / "config.json"))
                folds.push_back(e.path());
        std::sort(folds.begin(), folds.end());
        if (!folds.empty()) used = true;
        in.runs.insert(in.runs.end(), folds.begin(), folds.end());
        if (fs::exists(p / "roar") && fs::exists(p / "roar" / "roar_curve.csv")) {
            in.roar = p / "roar";
            used = true;
        }
        if (!used) problems.push_back(p.string() + " (no config.json, fold_* runs or roar_curve.csv)");
    }
    if (!problems.empty()) {
        std::string msg = "report inputs missing:";
        for (const auto& s : problems) msg += "\n  " + s;
        throw DataError(msg);
    }
    if (in.runs.empty() && !in.roar) throw DataError("report: no run directories given");
    return in;
}

namespace {

std::string fmt(double v, int prec = 4)
{
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(prec);
    s << v;
    return s.str();
}

struct Frame {
    double x0 = 60, y0 = 20, w = 520, h = 300;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    double px(double x) const { return x0 + (xmax > xmin ? (x - xmin) / (xmax - xmin) : 0.0) * w; }
    double py(double y) const { return y0 + h - (ymax > ymin ? (y - ymin) / (ymax - ymin) : 0.0) * h; }
};

std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel)
{
    std::ostringstream s;
    s << "<rect x='" << f.x0 << "' y='" << f.y0 << "' width='" << f.w << "' height='" << f.h
      << "' fill='none' stroke='#444'/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double yv = f.ymin + (f.ymax - f.ymin) * k / 4.0;
        s << "<text x='" << f.x0 - 6 << "' y='" << f.py(yv) + 4 << "' font-size='10' text-anchor='end'>"
          << fmt(yv, 2) << "</text>\n";
        const double xv = f.xmin + (f.xmax - f.xmin) * k / 4.0;
        s << "<text x='" << f.px(xv) << "' y='" << f.y0 + f.h + 14 << "' font-size='10' text-anchor='middle'>"
          << fmt(xv, 1) << "</text>\n";
    }
    s << "<text x='" << f.x0 + f.w / 2 << "' y='" << f.y0 + f.h + 32 << "' font-size='12' text-anchor='middle'>"
      << xlabel << "</text>\n";
    s << "<text x='14' y='" << f.y0 + f.h / 2 << "' font-size='12' transform='rotate(-90 14 " << f.y0 + f.h / 2
      << ")' text-anchor='middle'>" << ylabel << "</text>\n";
    return s.str();
}

std::string polyline(const Frame& f, std::span<const double> ys, const std::string& colour, const std::string& label)
{
    std::ostringstream s;
    s << "<polyline fill='none' stroke='" << colour << "' stroke-width='2' points='";
    for (std::size_t k = 0; k < ys.size(); ++k) s << f.px(double(k)) << "," << f.py(ys[k]) << " ";
    s << "'><title>" << label << "</title></polyline>\n";
    return s.str();
}

void write_text(const fs::path& file, const std::string& text)
{
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write " + file.string());
    out << text;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

} // namespace

std::string roar_svg(const RoarCurve& c, double abc_value)
{
    Frame f;
    f.xmax = double(std::max<std::size_t>(c.x.size(), 2) - 1);
    std::ostringstream s;
    s << "<svg xmlns='http://www.w3.org/2000/svg' width='620' height='380' font-family='sans-serif'>\n";
    s << axes(f, "features removed", "test accuracy");
    // shaded region between the curves
    s << "<polygon fill='#88c' fill-opacity='0.25' stroke='none' points='";
    for (std::size_t k = 0; k < c.inverse.size(); ++k) s << f.px(double(k)) << "," << f.py(c.inverse[k]) << " ";
    for (std::size_t k = c.truth.size(); k-- > 0;) s << f.px(double(k)) << "," << f.py(c.truth[k]) << " ";
    s << "'/>\n";
    s << polyline(f, c.truth, "#c33", "Truth") << polyline(f, c.inverse, "#33c", "Inverse");
    s << "<text x='" << f.x0 + f.w - 10 << "' y='" << f.y0 + 18 << "' font-size='12' text-anchor='end' fill='#c33'>"
      << "Truth</text>\n";
    s << "<text x='" << f.x0 + f.w - 10 << "' y='" << f.y0 + 34 << "' font-size='12' text-anchor='end' fill='#33c'>"
      << "Inverse</text>\n";
    s << "<text x='" << f.x0 + 10 << "' y='" << f.y0 + f.h - 10 << "' font-size='12'>ABC = " << fmt(abc_value)
      << "</text>\n";
    s << "</svg>\n";
    return s.str();
}

std::string gi_trajectory_svg(const std::vector<std::vector<double>>& traj, const std::vector<std::string>& names)
{
    Frame f;
    f.xmin = 1;
    f.xmax = double(std::max<std::size_t>(traj.size(), 2));
    double lo = 1.0, hi = 0.0;
    for (const auto& row : traj)
        for (double g : row) {
            lo = std::min(lo, g);
            hi = std::max(hi, g);
        }
    if (lo > hi) lo = 0.0, hi = 1.0;
    f.ymin = std::floor(lo * 20.0) / 20.0;
    f.ymax = std::max(f.ymin + 0.05, std::ceil(hi * 20.0) / 20.0);
    std::ostringstream s;
    s << "<svg xmlns='http://www.w3.org/2000/svg' width='620' height='380' font-family='sans-serif'>\n";
    s << axes(f, "epoch", "GI");
    const std::size_t d = traj.empty() ? 0 : traj.front().size();
    for (std::size_t j = 0; j < d; ++j) {
        const bool pseudo = j < names.size() && names[j].rfind("pseudo_", 0) == 0;
        s << "<polyline fill='none' stroke='" << (pseudo ? "#d22" : "#999") << "' stroke-width='"
          << (pseudo ? 2.5 : 1) << "' points='";
        for (std::size_t e = 0; e < traj.size(); ++e) s << f.px(double(e + 1)) << "," << f.py(traj[e][j]) << " ";
        s << "'><title>" << (j < names.size() ? names[j] : std::to_string(j)) << "</title></polyline>\n";
    }
    s << "</svg>\n";
    return s.str();
}

json write_report(const ReportInputs& in, const std::optional<GroundTruthMask>& gt, const fs::path& out)
{
    // Parse everything before writing anything.
    std::vector<RunRecord> runs;
    for (const auto& dir : in.runs) runs.push_back(read_run(dir));
    std::optional<RoarResult> roar;
    if (in.roar) roar = read_roar(*in.roar);

    json report = json::object();
    report["abc"] = roar ? json(roar->abc) : json(nullptr);
    report["da"] = roar ? json(roar->da) : json(nullptr);
    report["wda"] = roar ? json(roar->wda) : json(nullptr);
    report["abc_x_axis"] = "fraction of features removed";
    report["spearman"] = nullptr;
    report["kendall"] = nullptr;
    report["f1"] = nullptr;
    report["jaccard"] = nullptr;
    report["iacc"] = nullptr;
    if (roar) {
        report["roar_k_removed"] = roar->k_removed;
        report["roar_truth"] = roar->curve.truth;
        report["roar_inverse"] = roar->curve.inverse;
    }

    std::vector<std::string> names;
    std::vector<std::vector<double>> gis;
    std::vector<std::vector<double>> positions;
    json per_run = json::array();
    double f1 = 0, jac = 0, iacc = 0, acc = 0, mar = 0, ch = 0;
    std::vector<double> cwri_sum;
    std::size_t cwri_count = 0, cwri_c = 0;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const RunRecord& r = runs[k];
        if (r.test_attention.dim(0) == 0) throw DataError("run " + in.runs[k].string() + " has no test attentions");
        if (names.empty()) names = r.feature_names;
        else if (names != r.feature_names) throw DataError("runs disagree on feature names");
        const GiReport gi = r.gi();
        gis.push_back(gi.gi);
        positions.push_back(positions_from_order(gi.rank_desc));
        const FoldScore sc = score_run(r, gt);
        acc += sc.test_acc;
        mar += sc.mean_abs_r;
        ch += sc.calinski_harabasz;
        json jr = {{"dir", in.runs[k].string()}, {"fold", r.fold}, {"lambda", r.lambda},
                   {"test_acc", sc.test_acc}, {"mean_abs_r", sc.mean_abs_r},
                   {"calinski_harabasz", finite_or_null(sc.calinski_harabasz)}};
        if (gt) {
            f1 += sc.agreement.best().f1;
            jac += sc.agreement.best().jaccard;
            iacc += sc.agreement.best().iacc;
            jr["f1"] = sc.agreement.best().f1;
            jr["jaccard"] = sc.agreement.best().jaccard;
            jr["iacc"] = sc.agreement.best().iacc;
            jr["gt_variant"] = std::string(1, sc.agreement.selected);
        }
        std::vector<int> classes;
        const Tensor proto = class_prototypes(r.test_attention, r.test_labels, &classes);
        if (proto.dim(0) >= 2) {
            const CwriMatrix cw = cwri(proto);
            if (cwri_sum.empty()) {
                cwri_sum.assign(cw.scores.size(), 0.0);
                cwri_c = cw.c;
            }
            if (cw.scores.size() == cwri_sum.size()) {
                for (std::size_t i = 0; i < cw.scores.size(); ++i) cwri_sum[i] += cw.scores[i];
                ++cwri_count;
            }
        }
        per_run.push_back(jr);
    }
    if (!runs.empty()) {
        const double n = double(runs.size());
        report["test_acc"] = acc / n;
        report["mean_abs_r"] = mar / n;
        report["calinski_harabasz"] = finite_or_null(ch / n);
        if (gt) {
            report["f1"] = f1 / n;
            report["jaccard"] = jac / n;
            report["iacc"] = iacc / n;
        }
        if (runs.size() >= 2) {
            const RankCorrelation rc = rank_correlations(positions);
            report["spearman"] = rc.spearman;
            report["kendall"] = rc.kendall;
        }
    }
    report["runs"] = per_run;

    fs::create_directories(out);
    if (!gis.empty()) {
        const std::size_t d = gis.front().size();
        std::vector<double> mean(d, 0.0);
        for (const auto& g : gis)
            for (std::size_t j = 0; j < d; ++j) mean[j] += g[j] / double(gis.size());
        const auto order = rank_descending(mean);
        const auto pos = positions_from_order(order);
        std::string csv = "feature,name";
        for (std::size_t k = 0; k < gis.size(); ++k) csv += ",gi_run" + std::to_string(k);
        csv += ",gi_mean,rank\n";
        for (std::size_t j = 0; j < d; ++j) {
            csv += std::to_string(j) + "," + (j < names.size() ? names[j] : "");
            for (const auto& g : gis) csv += "," + format_double(g[j]);
            csv += "," + format_double(mean[j]) + "," + std::to_string(std::size_t(pos[j])) + "\n";
        }
        write_text(out / "gi_table.csv", csv);
        report["gi_mean"] = mean;
        report["gi_rank"] = order;
    }
    if (cwri_count > 0) {
        const std::size_t d = cwri_sum.size() / cwri_c;
        std::string csv = "class";
        for (std::size_t j = 0; j < d; ++j) csv += "," + (j < names.size() ? names[j] : std::to_string(j));
        csv += "\n";
        for (std::size_t c = 0; c < cwri_c; ++c) {
            csv += std::to_string(c);
            for (std::size_t j = 0; j < d; ++j) csv += "," + format_double(cwri_sum[c * d + j] / double(cwri_count));
            csv += "\n";
        }
        write_text(out / "cwri_heatmap.csv", csv);
    }
    if (roar) {
        write_text(out / "roar.svg", roar_svg(roar->curve, roar->abc));
        std::string csv = "removed,truth_acc,inverse_acc\n";
        for (std::size_t k = 0; k < roar->curve.x.size(); ++k)
            csv += std::to_string(roar->curve.x[k]) + "," + format_double(roar->curve.truth[k]) + "," +
                   format_double(roar->curve.inverse[k]) + "\n";
        write_text(out / "roar_curve.csv", csv);
    }
    for (std::size_t k = 0; k < runs.size(); ++k)
        if (!runs[k].gi_trajectory.empty())
            write_text(out / ("gi_trajectory_run" + std::to_string(k) + ".svg"),
                       gi_trajectory_svg(runs[k].gi_trajectory, runs[k].feature_names));
    write_text(out / "report.json", report.dump(1) + "\n");
    return report;
}

} // namespace cafo
