#include "cafo/dataset.hpp"

#include "cafo/error.hpp"
#include "cafo/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace cafo {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::size_t MtsDataset::num_folds() const
{
    int mx = -1;
    for (std::size_t i = 0; i < folds.size(); ++i)
        if (split[i] == Split::train) mx = std::max(mx, folds[i]);
    return std::size_t(mx + 1);
}

std::vector<double> MtsDataset::series(std::size_t i, std::size_t feature) const
{
    std::vector<double> out(t);
    for (std::size_t s = 0; s < t; ++s) out[s] = at(i, s, feature);
    return out;
}

std::vector<std::size_t> MtsDataset::indices(Split s) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
        if (split[i] == s) out.push_back(i);
    return out;
}

std::vector<std::size_t> MtsDataset::fold_indices(int fold) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
        if (split[i] == Split::train && folds[i] == fold) out.push_back(i);
    return out;
}

void MtsDataset::validate() const
{
    const std::size_t n = labels.size();
    if (values.size() != n * t * d)
        throw DataError("dataset has " + std::to_string(values.size()) + " values, expected N*T*D = " +
                        std::to_string(n * t * d));
    if (folds.size() != n || split.size() != n)
        throw DataError("dataset fold/split arrays do not match N = " + std::to_string(n));
    if (feature_names.size() != d)
        throw DataError("dataset has " + std::to_string(feature_names.size()) + " feature names for D = " +
                        std::to_string(d));
    for (int y : labels)
        if (y < 0 || std::size_t(y) >= c) throw DataError("label " + std::to_string(y) + " outside 0..C-1");
    for (int f : folds)
        if (f < 0) throw DataError("negative fold id");
    for (double v : values)
        if (!std::isfinite(v)) throw DataError("dataset contains non-finite values");
}

MtsDataset select_features(const MtsDataset& ds, std::span<const std::size_t> keep)
{
    MtsDataset out;
    out.t = ds.t;
    out.d = keep.size();
    out.c = ds.c;
    out.labels = ds.labels;
    out.folds = ds.folds;
    out.split = ds.split;
    for (std::size_t j : keep) {
        if (j >= ds.d) throw ShapeError("select_features: feature index " + std::to_string(j) + " out of range");
        out.feature_names.push_back(ds.feature_names[j]);
    }
    out.values.resize(ds.size() * ds.t * out.d);
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t s = 0; s < ds.t; ++s)
            for (std::size_t k = 0; k < keep.size(); ++k)
                out.values[(i * ds.t + s) * out.d + k] = ds.at(i, s, keep[k]);
    return out;
}

void assign_splits(MtsDataset& ds, std::size_t folds, double test_fraction, std::uint64_t seed)
{
    if (folds == 0) throw ShapeError("assign_splits: need at least one fold");
    if (test_fraction < 0.0 || test_fraction >= 1.0) throw ShapeError("assign_splits: test fraction in [0,1)");
    const std::size_t n = ds.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0x5317));
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = std::size_t(std::llround(test_fraction * double(n)));
    ds.split.assign(n, Split::train);
    ds.folds.assign(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t i = order[r];
        if (r < n_test) {
            ds.split[i] = Split::test;
        } else {
            ds.folds[i] = int((r - n_test) % folds);
        }
    }
}

std::string dataset_hash(const MtsDataset& ds)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t len) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < len; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    const std::uint64_t dims[4] = {ds.size(), ds.t, ds.d, ds.c};
    feed(dims, sizeof dims);
    feed(ds.labels.data(), ds.labels.size() * sizeof(int));
    for (double v : ds.values) {
        const float f = float(v);
        feed(&f, sizeof f);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_dataset(const MtsDataset& ds, const fs::path& dir)
{
    ds.validate();
    fs::create_directories(dir);
    json m;
    m["version"] = 1;
    m["n"] = ds.size();
    m["t"] = ds.t;
    m["d"] = ds.d;
    m["c"] = ds.c;
    m["feature_names"] = ds.feature_names;
    m["labels"] = ds.labels;
    m["folds"] = ds.folds;
    json split = json::array();
    for (Split s : ds.split) split.push_back(s == Split::train ? "train" : "test");
    m["split"] = split;
    {
        std::ofstream out(dir / "manifest.json");
        if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
        out << m.dump(1) << '\n';
    }
    std::vector<float> payload(ds.values.size());
    std::transform(ds.values.begin(), ds.values.end(), payload.begin(), [](double v) { return float(v); });
    std::ofstream out(dir / "data.bin", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "data.bin").string());
    out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size() * sizeof(float)));
    if (!out) throw DataError("short write to " + (dir / "data.bin").string());
}

MtsDataset read_dataset(const fs::path& dir)
{
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw DataError("dataset manifest not found: " + manifest_path.string());
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    MtsDataset ds;
    std::size_t n = 0;
    try {
        if (m.at("version").get<int>() != 1)
            throw DataError("unknown dataset version " + m.at("version").dump() + " in " + manifest_path.string());
        n = m.at("n").get<std::size_t>();
        ds.t = m.at("t").get<std::size_t>();
        ds.d = m.at("d").get<std::size_t>();
        ds.c = m.at("c").get<std::size_t>();
        ds.feature_names = m.at("feature_names").get<std::vector<std::string>>();
        ds.labels = m.at("labels").get<std::vector<int>>();
        ds.folds = m.at("folds").get<std::vector<int>>();
        for (const auto& s : m.at("split")) {
            const auto v = s.get<std::string>();
            if (v != "train" && v != "test") throw DataError("unknown split value '" + v + "'");
            ds.split.push_back(v == "train" ? Split::train : Split::test);
        }
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }
    if (ds.labels.size() != n) throw DataError("manifest n does not match label count");

    const fs::path data_path = dir / "data.bin";
    std::ifstream bin(data_path, std::ios::binary | std::ios::ate);
    if (!bin) throw DataError("dataset payload not found: " + data_path.string());
    const auto bytes = std::size_t(bin.tellg());
    const std::size_t expected = n * ds.t * ds.d;
    if (bytes != expected * sizeof(float))
        throw DataError("payload " + data_path.string() + " holds " + std::to_string(bytes / sizeof(float)) +
                        " values, manifest declares N*T*D = " + std::to_string(expected));
    std::vector<float> payload(expected);
    bin.seekg(0);
    bin.read(reinterpret_cast<char*>(payload.data()), std::streamsize(bytes));
    ds.values.assign(payload.begin(), payload.end());
    ds.validate();
    return ds;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

template <class T>
T parse_number(const std::string& s, std::size_t line_no, const char* what)
{
    T v{};
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || p != end)
        throw DataError("CSV line " + std::to_string(line_no) + ": cannot parse " + what + " '" + s + "'");
    return v;
}

} // namespace

MtsDataset read_csv(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("CSV file not found: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw DataError("CSV file is empty: " + path.string());
    const auto header = split_csv_line(line);
    if (header.size() < 4 || header[0] != "instance_id" || header[1] != "t" || header[2] != "label")
        throw DataError("CSV header must start with instance_id,t,label followed by feature columns");

    // Feature columns must be exactly f0..f{D-1}, in order.
    std::vector<int> seen;
    for (std::size_t k = 3; k < header.size(); ++k) {
        const std::string& h = header[k];
        if (h.size() < 2 || h[0] != 'f')
            throw DataError("CSV column '" + h + "' is not a feature column (expected f<index>)");
        seen.push_back(parse_number<int>(h.substr(1), 1, "feature column index"));
    }
    const int max_index = *std::max_element(seen.begin(), seen.end());
    for (int j = 0; j <= max_index; ++j)
        if (std::find(seen.begin(), seen.end(), j) == seen.end())
            throw DataError("CSV is missing feature column f" + std::to_string(j));
    for (std::size_t k = 0; k < seen.size(); ++k)
        if (seen[k] != int(k)) throw DataError("CSV feature columns must appear in order f0..f" +
                                               std::to_string(max_index));

    MtsDataset ds;
    ds.d = seen.size();
    for (std::size_t j = 0; j < ds.d; ++j) ds.feature_names.push_back("f" + std::to_string(j));

    std::string current_id;
    std::size_t current_t = 0;
    std::size_t line_no = 1;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " cells, got " + std::to_string(cells.size()));
        const auto step = parse_number<std::size_t>(cells[1], line_no, "t");
        const int label = parse_number<int>(cells[2], line_no, "label");
        if (cells[0] != current_id || ds.labels.empty()) {
            if (!ds.labels.empty()) {
                if (ds.t == 0) ds.t = current_t;
                else if (current_t != ds.t)
                    throw DataError("CSV instance '" + current_id + "' has " + std::to_string(current_t) +
                                    " time steps, expected " + std::to_string(ds.t));
            }
            if (step != 0) throw DataError("CSV line " + std::to_string(line_no) + ": instance must start at t=0");
            current_id = cells[0];
            current_t = 0;
            ds.labels.push_back(label);
            max_label = std::max(max_label, label);
        } else if (label != ds.labels.back()) {
            throw DataError("CSV line " + std::to_string(line_no) + ": label changes within instance '" +
                            current_id + "'");
        }
        if (step != current_t)
            throw DataError("CSV line " + std::to_string(line_no) + ": t must ascend from 0 without gaps");
        for (std::size_t j = 0; j < ds.d; ++j)
            ds.values.push_back(parse_number<double>(cells[3 + j], line_no, "feature value"));
        ++current_t;
    }
    if (ds.labels.empty()) throw DataError("CSV has no data rows: " + path.string());
    if (ds.t == 0) ds.t = current_t;
    else if (current_t != ds.t)
        throw DataError("CSV instance '" + current_id + "' has " + std::to_string(current_t) +
                        " time steps, expected " + std::to_string(ds.t));
    ds.c = std::size_t(max_label + 1);
    ds.folds.assign(ds.labels.size(), 0);
    ds.split.assign(ds.labels.size(), Split::train);
    ds.validate();
    return ds;
}

MtsDataset load_dataset(const fs::path& path, std::size_t folds, std::uint64_t seed)
{
    if (!fs::exists(path)) throw DataError("dataset path does not exist: " + path.string());
    if (path.extension() == ".csv") {
        MtsDataset ds = read_csv(path);
        assign_splits(ds, folds, 0.2, seed);
        return ds;
    }
    return read_dataset(path);
}

} // namespace cafo
