#include "yolors/config.hpp"

#include <cstdlib>
#include <fstream>

namespace yolors {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::map<std::string, std::string> out;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                                 ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                               ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) + ": empty key");
    out[section.empty() ? key : section + "." + key] = value;
  }
  return out;
}

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["input_size"] = cfg.input_size;
  j["backbone_widths"] = cfg.backbone_widths;
  j["pyramid_channels"] = cfg.pyramid_channels;
  j["levels"] = cfg.levels;
  j["classes"] = cfg.classes;
  j["lr"] = cfg.lr;
  j["lr_final"] = cfg.lr_final;
  j["momentum"] = cfg.momentum;
  j["batch_size"] = cfg.batch_size;
  j["epochs"] = cfg.epochs;
  j["seed"] = cfg.seed;
  j["toggles"] = {{"caa", cfg.toggles.caa},
                  {"rfaconv", cfg.toggles.rfaconv},
                  {"bifpn", cfg.toggles.bifpn},
                  {"acmix", cfg.toggles.acmix},
                  {"self_attention", cfg.toggles.self_attention}};
  j["lambda_x"] = cfg.lambda_x;
  j["lambda_c"] = cfg.lambda_c;
  j["lambda_l1"] = cfg.lambda_l1;
  j["lambda_gan"] = cfg.lambda_gan;
  j["conf_threshold"] = cfg.conf_threshold;
  j["nms_iou"] = cfg.nms_iou;
  j["box_size_base"] = cfg.box_size_base;
  j["augment_multiplier"] = cfg.augment_multiplier;
  j["augment_strength"] = cfg.augment_strength;
  j["augment_beta"] = cfg.augment_beta;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.input_size = j.value("input_size", cfg.input_size);
  cfg.backbone_widths = j.value("backbone_widths", cfg.backbone_widths);
  cfg.pyramid_channels = j.value("pyramid_channels", cfg.pyramid_channels);
  cfg.levels = j.value("levels", cfg.levels);
  cfg.classes = j.value("classes", cfg.classes);
  cfg.lr = j.value("lr", cfg.lr);
  cfg.lr_final = j.value("lr_final", cfg.lr_final);
  cfg.momentum = j.value("momentum", cfg.momentum);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("toggles")) {
    const auto& t = j["toggles"];
    cfg.toggles.caa = t.value("caa", true);
    cfg.toggles.rfaconv = t.value("rfaconv", true);
    cfg.toggles.bifpn = t.value("bifpn", true);
    cfg.toggles.acmix = t.value("acmix", true);
    cfg.toggles.self_attention = t.value("self_attention", true);
  }
  cfg.lambda_x = j.value("lambda_x", cfg.lambda_x);
  cfg.lambda_c = j.value("lambda_c", cfg.lambda_c);
  cfg.lambda_l1 = j.value("lambda_l1", cfg.lambda_l1);
  cfg.lambda_gan = j.value("lambda_gan", cfg.lambda_gan);
  cfg.conf_threshold = j.value("conf_threshold", cfg.conf_threshold);
  cfg.nms_iou = j.value("nms_iou", cfg.nms_iou);
  cfg.box_size_base = j.value("box_size_base", cfg.box_size_base);
  cfg.augment_multiplier = j.value("augment_multiplier", cfg.augment_multiplier);
  cfg.augment_strength = j.value("augment_strength", cfg.augment_strength);
  cfg.augment_beta = j.value("augment_beta", cfg.augment_beta);
  return cfg;
}

std::string default_out_dir() {
  if (const char* env = std::getenv("YOLORS_OUT"))
    if (*env) return env;
  return "out";
}

}  // namespace yolors
