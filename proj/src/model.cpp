#include "sleepdet/model.hpp"

#include <fstream>

#include "json.hpp"
#include "sleepdet/record.hpp"

namespace sleepdet::net {

using nlohmann::json;

void ModelConfig::validate() const {
  if (input_channels < 1) throw ValidationError("config: input_channels must be positive");
  if (dcu1_count < 1 || dcu2_count < 1)
    throw ValidationError("config: need at least one unit of each kind");
  if (static_cast<int>(pool_widths.size()) != dcu1_count)
    throw ValidationError("config: one pool width per first-stage unit");
  for (int w : pool_widths)
    if (w < 1) throw ValidationError("config: pool widths must be positive");
  if (static_cast<int>(dcu1_out_channels.size()) != dcu1_count)
    throw ValidationError("config: one output width per first-stage unit");
  for (int c : dcu1_out_channels)
    if (c < kSublayersPerUnit || c % kSublayersPerUnit != 0)
      throw ValidationError("config: unit widths must be positive multiples of 4");
  if (dcu2_channels < kSublayersPerUnit || dcu2_channels % kSublayersPerUnit != 0)
    throw ValidationError("config: unit widths must be positive multiples of 4");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ValidationError("config: kernel size must be odd");
  if (static_cast<int>(dilation_schedule.size()) != dcu2_count)
    throw ValidationError("config: one dilation per dilated unit");
  for (int d : dilation_schedule)
    if (d < 1) throw ValidationError("config: dilations must be positive");
  if (lstm_hidden < 1) throw ValidationError("config: lstm_hidden must be positive");
  if (!use_lstm && !use_residual_in_lstm_block)
    throw ValidationError("config: the LSTM block needs the LSTM or the residual path");
}

int ModelConfig::pool_product() const {
  int p = 1;
  for (int w : pool_widths) p *= w;
  return p;
}

ModelConfig ModelConfig::desk_scale(int width, int lstm) {
  ModelConfig cfg;
  cfg.dcu1_out_channels = {width, width, width};
  cfg.dcu2_channels = width;
  cfg.lstm_hidden = lstm;
  cfg.validate();
  return cfg;
}

ModelConfig apply_ablation(const ModelConfig& config, int experiment) {
  ModelConfig out = config;
  switch (experiment) {
    case 1:
      break;
    case 2:
      out.activation = ModelConfig::Activation::relu;
      break;
    case 3:
      out.positionwise_in_dcu1 = true;
      break;
    case 4:
      out.positionwise_in_dcu2 = false;
      break;
    case 5:
      out.use_lstm = false;
      break;
    case 6:
      out.use_moving_normalization = false;
      break;
    case 7:
      out.use_residual_in_lstm_block = false;
      break;
    case 8:
      out.use_weight_norm = false;
      break;
    case 9:
      out.multi_task = false;
      break;
    case 10: {
      // Dilations of the second half of the dilated stack fixed to one.
      const size_t n = out.dilation_schedule.size();
      for (size_t i = n - std::min<size_t>(5, n); i < n; ++i) out.dilation_schedule[i] = 1;
      break;
    }
    default:
      throw ValidationError("ablation: experiment must be in 1..10");
  }
  out.validate();
  return out;
}

std::string ablation_description(int experiment) {
  switch (experiment) {
    case 1: return "baseline model";
    case 2: return "SELU replaced by RELU";
    case 3: return "position-wise normalization on in DCU1";
    case 4: return "position-wise normalization off in DCU2";
    case 5: return "bidirectional LSTM removed";
    case 6: return "moving-window signal normalization removed";
    case 7: return "residual mapping removed from the LSTM block";
    case 8: return "weight normalization removed everywhere";
    case 9: return "single-task training (arousal only)";
    case 10: return "dilations of the last five dense units fixed to one";
    default: throw ValidationError("ablation: experiment must be in 1..10");
  }
}

std::string config_to_json(const ModelConfig& c) {
  json j;
  j["input_channels"] = c.input_channels;
  j["dcu1_count"] = c.dcu1_count;
  j["dcu2_count"] = c.dcu2_count;
  j["pool_widths"] = c.pool_widths;
  j["dcu1_out_channels"] = c.dcu1_out_channels;
  j["dcu2_channels"] = c.dcu2_channels;
  j["kernel_size"] = c.kernel_size;
  j["dilation_schedule"] = c.dilation_schedule;
  j["lstm_hidden"] = c.lstm_hidden;
  j["activation"] = c.activation == ModelConfig::Activation::selu ? "selu" : "relu";
  j["positionwise_in_dcu1"] = c.positionwise_in_dcu1;
  j["positionwise_in_dcu2"] = c.positionwise_in_dcu2;
  j["use_lstm"] = c.use_lstm;
  j["use_residual_in_lstm_block"] = c.use_residual_in_lstm_block;
  j["use_weight_norm"] = c.use_weight_norm;
  j["multi_task"] = c.multi_task;
  j["use_moving_normalization"] = c.use_moving_normalization;
  return j.dump(2);
}

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  ModelConfig c;
  try {
    c.input_channels = j.value("input_channels", c.input_channels);
    c.dcu1_count = j.value("dcu1_count", c.dcu1_count);
    c.dcu2_count = j.value("dcu2_count", c.dcu2_count);
    c.pool_widths = j.value("pool_widths", c.pool_widths);
    c.dcu1_out_channels = j.value("dcu1_out_channels", c.dcu1_out_channels);
    c.dcu2_channels = j.value("dcu2_channels", c.dcu2_channels);
    c.kernel_size = j.value("kernel_size", c.kernel_size);
    c.dilation_schedule = j.value("dilation_schedule", c.dilation_schedule);
    c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
    const std::string act = j.value("activation", std::string("selu"));
    if (act == "selu") c.activation = ModelConfig::Activation::selu;
    else if (act == "relu") c.activation = ModelConfig::Activation::relu;
    else throw FormatError("config: unknown activation " + act);
    c.positionwise_in_dcu1 = j.value("positionwise_in_dcu1", c.positionwise_in_dcu1);
    c.positionwise_in_dcu2 = j.value("positionwise_in_dcu2", c.positionwise_in_dcu2);
    c.use_lstm = j.value("use_lstm", c.use_lstm);
    c.use_residual_in_lstm_block =
        j.value("use_residual_in_lstm_block", c.use_residual_in_lstm_block);
    c.use_weight_norm = j.value("use_weight_norm", c.use_weight_norm);
    c.multi_task = j.value("multi_task", c.multi_task);
    c.use_moving_normalization =
        j.value("use_moving_normalization", c.use_moving_normalization);
  } catch (const json::type_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace detail {

namespace {

void add_conv(std::vector<ParamSpec>& out, const ModelConfig& cfg, const std::string& prefix,
              int64_t cout, int64_t cin_per_group, int64_t k) {
  const int64_t fan = cin_per_group * k;
  if (cfg.use_weight_norm) {
    out.push_back({prefix + ".v", {cout, cin_per_group, k}, ParamKind::direction, fan});
    out.push_back({prefix + ".g", {cout}, ParamKind::magnitude, 1});
  } else {
    out.push_back({prefix + ".w", {cout, cin_per_group, k}, ParamKind::plain_weight, fan});
  }
  out.push_back({prefix + ".b", {cout}, ParamKind::bias, 1});
}

void add_lstm_mat(std::vector<ParamSpec>& out, const ModelConfig& cfg,
                  const std::string& prefix, int64_t rows, int64_t cols) {
  if (cfg.use_weight_norm) {
    out.push_back({prefix + ".v", {rows, cols}, ParamKind::direction, cols});
    out.push_back({prefix + ".g", {rows}, ParamKind::magnitude, 1});
  } else {
    out.push_back({prefix + ".w", {rows, cols}, ParamKind::plain_weight, cols});
  }
}

void add_bn(std::vector<ParamSpec>& out, const std::string& prefix, int64_t channels) {
  out.push_back({prefix + ".gamma", {channels}, ParamKind::bn_gamma, 1});
  out.push_back({prefix + ".beta", {channels}, ParamKind::bn_beta, 1});
  out.push_back({prefix + ".running_mean", {channels}, ParamKind::bn_mean, 1, false});
  out.push_back({prefix + ".running_var", {channels}, ParamKind::bn_var, 1, false});
}

void add_unit(std::vector<ParamSpec>& out, const ModelConfig& cfg, const std::string& prefix,
              int64_t in_channels, int64_t growth) {
  for (int j = 0; j < ModelConfig::kSublayersPerUnit; ++j) {
    const int64_t cin = in_channels + j * growth;
    const std::string sub = prefix + ".sub" + std::to_string(j);
    add_conv(out, cfg, sub + ".dw", cin, 1, cfg.kernel_size);
    add_conv(out, cfg, sub + ".pw", growth, cin, 1);
    add_bn(out, sub + ".bn", growth);
  }
}

}  // namespace

std::vector<ParamSpec> enumerate_params(const ModelConfig& cfg) {
  std::vector<ParamSpec> out;
  int64_t ch = cfg.input_channels;
  for (int u = 0; u < cfg.dcu1_count; ++u) {
    const int64_t y = cfg.dcu1_out_channels[static_cast<size_t>(u)];
    add_unit(out, cfg, "dcu1." + std::to_string(u), ch, y / ModelConfig::kSublayersPerUnit);
    ch = y;
  }
  for (int u = 0; u < cfg.dcu2_count; ++u) {
    add_unit(out, cfg, "dcu2." + std::to_string(u), ch,
             cfg.dcu2_channels / ModelConfig::kSublayersPerUnit);
    ch = cfg.dcu2_channels;
  }
  const int64_t h = cfg.lstm_hidden;
  if (cfg.use_lstm) {
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string p = std::string("lstm.") + dir;
      add_lstm_mat(out, cfg, p + ".wx", 4 * h, ch);
      add_lstm_mat(out, cfg, p + ".wh", 4 * h, h);
      out.push_back({p + ".b", {4 * h}, ParamKind::lstm_forget_bias, 1});
    }
  }
  if (cfg.use_residual_in_lstm_block) add_conv(out, cfg, "lstm.res", 2 * h, ch, 1);
  add_conv(out, cfg, "lstm.conv_a", 2 * h, 2 * h, 1);
  add_conv(out, cfg, "lstm.conv_b", 4, 2 * h, 1);
  return out;
}

}  // namespace detail

void save_checkpoint(const ModelConfig& config, const DrcnnParams<float>& params,
                     const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream cfg(dir / "config.json", std::ios::trunc);
    if (!cfg) throw IoError("cannot write config.json");
    cfg << config_to_json(config) << "\n";
  }
  std::vector<std::pair<std::string, std::string>> entries;
  for (const auto& e : params.entries)
    entries.emplace_back("tensor", e.name + " " + shape_str(e.tensor.shape));
  io::write_manifest(dir / "manifest", "sleepdet-checkpoint v1", entries);
  for (const auto& e : params.entries)
    io::write_f32_file(dir / (e.name + ".f32"), e.tensor.data.data(), e.tensor.numel());
}

std::pair<ModelConfig, DrcnnParams<float>> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream cfg_in(dir / "config.json");
  if (!cfg_in) throw FormatError("missing config.json in " + dir.string());
  std::string text((std::istreambuf_iterator<char>(cfg_in)), std::istreambuf_iterator<char>());
  const ModelConfig config = config_from_json(text);
  io::read_manifest(dir / "manifest", "sleepdet-checkpoint v1");

  // The layout comes from the config; blobs must match it exactly.
  DrcnnParams<float> params;
  for (const auto& spec : detail::enumerate_params(config)) {
    const int64_t numel = Tensor<float>::numel_of(spec.shape);
    auto data = io::read_f32_file(dir / (spec.name + ".f32"), numel);
    params.add(spec.name, Tensor<float>::from(spec.shape, std::move(data)), spec.learnable);
  }
  return {config, std::move(params)};
}

}  // namespace sleepdet::net
