#pragma once

// DepCA attention head, gating, and the small CNN backbone.

#include "cafo/autograd.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cafo {

struct DepCaConfig {
    std::size_t gamma = 3;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    /// -1 means "same" padding, (kernel - 1) / 2.
    long pad = -1;

    std::size_t padding() const { return pad < 0 ? (kernel - 1) / 2 : std::size_t(pad); }
    void validate() const;
};

struct ConvBlock {
    std::size_t out_channels = 16;
    std::size_t kernel = 3;
    std::size_t stride = 2;
};

struct BackboneConfig {
    std::vector<ConvBlock> blocks{{16, 3, 2}, {32, 3, 2}};
    /// 0 disables the hidden dense layer.
    std::size_t hidden = 0;
    std::size_t classes = 3;
};

struct ModelConfig {
    std::size_t channels = 30; // D
    std::size_t side = 32;     // L
    DepCaConfig depca;
    BackboneConfig backbone;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

class CafoModel {
public:
    CafoModel(ModelConfig cfg, std::uint64_t seed);

    struct Output {
        ag::Var logits;    // [n, classes]
        ag::Var attention; // [n, D]
    };

    /// x: [n, D, L, L]
    Output forward(const ag::Var& x) const;
    ag::Var depca(const ag::Var& x) const;

    const ModelConfig& config() const { return cfg_; }
    std::vector<ag::Var>& params() { return params_; }
    const std::vector<ag::Var>& params() const { return params_; }
    const std::vector<std::string>& param_names() const { return names_; }
    std::size_t num_values() const;

    /// Index of a named parameter, throws if absent.
    std::size_t param_index(const std::string& name) const;

private:
    ModelConfig cfg_;
    std::vector<ag::Var> params_;
    std::vector<std::string> names_;
};

/// x[n, c, h, w] * a[n, c]
ag::Var apply_attention(const ag::Var& x, const ag::Var& a);

/// Single-instance conveniences over a D x L x L stack.
Tensor depca_forward(const CafoModel& model, const Tensor& stack);
Tensor model_forward(const CafoModel& model, const Tensor& stack);

/// Checkpoint: "CAFOCKPT", u64 header length, JSON header, f64 LE payload.
void save_checkpoint(const CafoModel& model, const std::filesystem::path& file, const nlohmann::json& extra = {});
CafoModel load_checkpoint(const std::filesystem::path& file, nlohmann::json* header = nullptr);

} // namespace cafo
