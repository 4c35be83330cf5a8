#include "mixformer/config_json.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mixformer {

namespace {

using nlohmann::json;

json parse(const std::string& text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/true);
  if (!j.is_object()) throw std::invalid_argument("config root must be a JSON object");
  return j;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file '" + path + "'");
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw std::invalid_argument(std::string(what) + ": unknown key '" + key + "'");
    }
  }
}

std::array<int, 4> four_ints(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 4) {
    throw std::invalid_argument(std::string(key) + " must list exactly 4 stages, got " +
                                std::to_string(j.is_array() ? j.size() : 0));
  }
  std::array<int, 4> out{};
  for (size_t i = 0; i < 4; ++i) out[i] = j[i].get<int>();
  return out;
}

ModelConfig model_config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "name",          "base_channels",       "blocks",
      "heads",         "num_classes",         "window",
      "dwconv_kernel", "ffn_expansion",       "mode",
      "channel_interaction", "spatial_interaction", "shifted_windows",
      "dwconv_in_ffn", "relative_position_bias", "projection_channels",
      "variant"};
  reject_unknown(j, known, "model config");
  ModelConfig cfg;
  if (j.contains("variant")) cfg = ModelConfig::variant(j["variant"].get<std::string>());
  if (j.contains("name")) cfg.name = j["name"].get<std::string>();
  if (j.contains("base_channels")) cfg.base_channels = j["base_channels"].get<int>();
  if (j.contains("blocks")) cfg.blocks = four_ints(j["blocks"], "blocks");
  if (j.contains("heads")) cfg.heads = four_ints(j["heads"], "heads");
  if (j.contains("num_classes")) cfg.num_classes = j["num_classes"].get<int>();
  if (j.contains("window")) cfg.window = j["window"].get<int>();
  if (j.contains("dwconv_kernel")) cfg.dwconv_kernel = j["dwconv_kernel"].get<int>();
  if (j.contains("ffn_expansion")) cfg.ffn_expansion = j["ffn_expansion"].get<int>();
  if (j.contains("mode")) {
    std::string mode = j["mode"].get<std::string>();
    if (mode == "parallel") {
      cfg.mode = BlockMode::Parallel;
    } else if (mode == "successive") {
      cfg.mode = BlockMode::Successive;
    } else {
      throw std::invalid_argument("mode must be 'parallel' or 'successive', got '" + mode + "'");
    }
  }
  if (j.contains("channel_interaction")) {
    cfg.channel_interaction = j["channel_interaction"].get<bool>();
  }
  if (j.contains("spatial_interaction")) {
    cfg.spatial_interaction = j["spatial_interaction"].get<bool>();
  }
  if (j.contains("shifted_windows")) cfg.shifted_windows = j["shifted_windows"].get<bool>();
  if (j.contains("dwconv_in_ffn")) cfg.dwconv_in_ffn = j["dwconv_in_ffn"].get<bool>();
  if (j.contains("relative_position_bias")) {
    cfg.relative_position_bias = j["relative_position_bias"].get<bool>();
  }
  if (j.contains("projection_channels")) {
    cfg.projection_channels = j["projection_channels"].get<int>();
  }
  cfg.validate();
  return cfg;
}

}  // namespace

ModelConfig model_config_from_json_text(const std::string& text) {
  return model_config_from_json(parse(text));
}

ModelConfig model_config_from_file(const std::string& path) {
  return model_config_from_json_text(read_file(path));
}

ToyRunConfig toy_run_config_from_json_text(const std::string& text) {
  json j = parse(text);
  static const std::set<std::string> known = {
      "seed",          "steps",         "batch_size",        "learning_rate",
      "weight_decay",  "cosine_decay",  "warmup_steps",      "min_learning_rate",
      "num_classes",   "samples_per_class", "image_size",    "noise",
      "model"};
  reject_unknown(j, known, "train config");
  ToyRunConfig cfg;
  if (j.contains("seed")) cfg.train.seed = j["seed"].get<uint64_t>();
  if (j.contains("steps")) cfg.train.steps = j["steps"].get<int>();
  if (j.contains("batch_size")) cfg.train.batch_size = j["batch_size"].get<int>();
  if (j.contains("learning_rate")) cfg.train.learning_rate = j["learning_rate"].get<double>();
  if (j.contains("weight_decay")) cfg.train.weight_decay = j["weight_decay"].get<double>();
  if (j.contains("cosine_decay")) cfg.train.cosine_decay = j["cosine_decay"].get<bool>();
  if (j.contains("warmup_steps")) cfg.train.warmup_steps = j["warmup_steps"].get<int>();
  if (j.contains("min_learning_rate")) {
    cfg.train.min_learning_rate = j["min_learning_rate"].get<double>();
  }
  if (j.contains("num_classes")) cfg.dataset.num_classes = j["num_classes"].get<int>();
  if (j.contains("samples_per_class")) {
    cfg.dataset.samples_per_class = j["samples_per_class"].get<int>();
  }
  if (j.contains("image_size")) cfg.dataset.image_size = j["image_size"].get<int>();
  if (j.contains("noise")) cfg.dataset.noise = j["noise"].get<double>();
  if (j.contains("model")) {
    if (j["model"].is_string()) {
      cfg.model = ModelConfig::variant(j["model"].get<std::string>());
    } else if (j["model"].is_object()) {
      cfg.model = model_config_from_json(j["model"]);
    } else {
      throw std::invalid_argument("model must be a variant name or a config object");
    }
  }
  cfg.dataset.seed = cfg.train.seed;
  if (cfg.model.num_classes < cfg.dataset.num_classes) {
    cfg.model.num_classes = cfg.dataset.num_classes;
  }
  cfg.train.validate();
  return cfg;
}

ToyRunConfig toy_run_config_from_file(const std::string& path) {
  return toy_run_config_from_json_text(read_file(path));
}

}  // namespace mixformer
