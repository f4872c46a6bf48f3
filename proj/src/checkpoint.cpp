#include "cafo/error.hpp"
#include "cafo/model.hpp"

#include <cstring>
#include <fstream>

namespace cafo {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'A', 'F', 'O', 'C', 'K', 'P', 'T'};

} // namespace

void save_checkpoint(const CafoModel& model, const fs::path& file, const json& extra)
{
    json header = extra.is_object() ? extra : json::object();
    header["model"] = to_json(model.config());
    json shapes = json::array();
    for (std::size_t i = 0; i < model.params().size(); ++i)
        shapes.push_back({{"name", model.param_names()[i]}, {"shape", model.params()[i].shape()}});
    header["params"] = shapes;
    const std::string text = header.dump();
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + file.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto& p : model.params())
        out.write(reinterpret_cast<const char*>(p.value().ptr()), std::streamsize(p.value().size() * sizeof(double)));
    if (!out) throw DataError("short write to checkpoint " + file.string());
}

CafoModel load_checkpoint(const fs::path& file, json* header_out)
{
    std::ifstream in(file, std::ios::binary);
    if (!in) throw DataError("checkpoint not found: " + file.string());
    char magic[8];
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0 || len > (1u << 26))
        throw DataError("not a checkpoint file: " + file.string());
    std::string text(len, '\0');
    in.read(text.data(), std::streamsize(len));
    json header;
    try {
        header = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError("malformed checkpoint header in " + file.string() + ": " + e.what());
    }
    CafoModel model(model_config_from_json(header.at("model")), 0);
    for (auto& p : model.params()) {
        in.read(reinterpret_cast<char*>(p.mutable_value().ptr()), std::streamsize(p.value().size() * sizeof(double)));
        if (!in) throw DataError("checkpoint payload truncated: " + file.string());
    }
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint payload too long: " + file.string());
    if (header_out) *header_out = std::move(header);
    return model;
}

} // namespace cafo
