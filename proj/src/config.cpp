#include "sketchseg/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sketchseg {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<Index> parse_index_list(const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(static_cast<Index>(std::stoll(part)));
  }
  return out;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    try {
      if (key == "image_size") cfg.encoder.image_size = std::stoll(value);
      else if (key == "patch_size") cfg.encoder.patch_size = std::stoll(value);
      else if (key == "d_model") cfg.encoder.d_model = std::stoll(value);
      else if (key == "d_joint") cfg.encoder.d_joint = std::stoll(value);
      else if (key == "n_layers") cfg.encoder.n_layers = std::stoll(value);
      else if (key == "n_heads") cfg.encoder.n_heads = std::stoll(value);
      else if (key == "n_prompts") cfg.encoder.n_prompts = std::stoll(value);
      else if (key == "cross_attn_layers") cfg.encoder.cross_attn_layers = parse_index_list(value);
      else if (key == "margin") cfg.training.margin = std::stof(value);
      else if (key == "batch_size") cfg.training.batch_size = std::stoi(value);
      else if (key == "learning_rate") cfg.training.learning_rate = std::stof(value);
      else if (key == "epochs") cfg.training.epochs = std::stoi(value);
      else if (key == "weight_decay") cfg.training.weight_decay = std::stof(value);
      else if (key == "threshold_init") cfg.training.threshold_init = std::stof(value);
      else if (key == "threshold_gate_steepness") cfg.training.gate_steepness = std::stof(value);
      else if (key == "seed") cfg.training.seed = std::stoull(value);
      else if (key == "negative_mining") {
        if (value == "hardest-closest") cfg.training.mining = NegativeMining::kHardestClosest;
        else if (value == "most-dissimilar") cfg.training.mining = NegativeMining::kMostDissimilar;
        else throw std::invalid_argument("negative_mining must be 'hardest-closest' or 'most-dissimilar'");
      } else {
        throw std::invalid_argument("unknown config key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": cannot parse value '" + value + "' for key '" + key + "'");
    }
  }
  cfg.encoder.validate();
  cfg.training.validate();
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string config_to_text(const RunConfig& config) {
  std::ostringstream out;
  out << "image_size = " << config.encoder.image_size << "\n";
  out << "patch_size = " << config.encoder.patch_size << "\n";
  out << "d_model = " << config.encoder.d_model << "\n";
  out << "d_joint = " << config.encoder.d_joint << "\n";
  out << "n_layers = " << config.encoder.n_layers << "\n";
  out << "n_heads = " << config.encoder.n_heads << "\n";
  out << "n_prompts = " << config.encoder.n_prompts << "\n";
  out << "cross_attn_layers = ";
  for (std::size_t i = 0; i < config.encoder.cross_attn_layers.size(); ++i) {
    out << (i ? "," : "") << config.encoder.cross_attn_layers[i];
  }
  out << "\n";
  out << "margin = " << config.training.margin << "\n";
  out << "batch_size = " << config.training.batch_size << "\n";
  out << "learning_rate = " << config.training.learning_rate << "\n";
  out << "epochs = " << config.training.epochs << "\n";
  out << "weight_decay = " << config.training.weight_decay << "\n";
  out << "threshold_init = " << config.training.threshold_init << "\n";
  out << "threshold_gate_steepness = " << config.training.gate_steepness << "\n";
  out << "negative_mining = "
      << (config.training.mining == NegativeMining::kHardestClosest ? "hardest-closest"
                                                                    : "most-dissimilar")
      << "\n";
  out << "seed = " << config.training.seed << "\n";
  return out.str();
}

}  // namespace sketchseg
