#include "sketchseg/text.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sketchseg/rng.hpp"

namespace sketchseg {

TextEncoder::TextEncoder(Index dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim < 1) throw std::invalid_argument("TextEncoder: dim must be positive");
  Rng rng(splitmix64(seed) ^ 0x7465787470726f6aULL);
  proj_.resize(dim, dim);
  for (Index i = 0; i < proj_.size(); ++i) {
    proj_.data()[i] = static_cast<float>(rng.normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim))));
  }
}

Matf TextEncoder::token_vector(const std::string& token) const {
  Rng rng(hash_text(token.data(), token.size(), seed_));
  Matf v(1, dim_);
  for (Index i = 0; i < dim_; ++i) v(0, i) = static_cast<float>(rng.normal());
  return v;
}

Matf TextEncoder::embed(const std::string& text) const {
  if (text.empty()) throw std::invalid_argument("embed_text: empty text");
  auto it = table_.find(text);
  if (it != table_.end()) return l2_normalize_rows(it->second);

  std::istringstream ss(text);
  std::string token;
  Matf mean = Matf::Zero(1, dim_);
  Index n = 0;
  while (ss >> token) {
    mean += token_vector(token);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("embed_text: text has no tokens");
  mean /= static_cast<float>(n);
  Matf v = l2_normalize_rows(mean) * proj_;
  return l2_normalize_rows(v);
}

void TextEncoder::load_precomputed(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding table: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    const std::string text = j.at("text").get<std::string>();
    const auto vec = j.at("vector").get<std::vector<float>>();
    if (static_cast<Index>(vec.size()) != dim_) {
      throw std::runtime_error("embedding table line " + std::to_string(line_no) +
                               ": dimension " + std::to_string(vec.size()) +
                               " does not match encoder dim " + std::to_string(dim_));
    }
    Matf v(1, dim_);
    for (Index i = 0; i < dim_; ++i) v(0, i) = vec[static_cast<std::size_t>(i)];
    table_[text] = v;
  }
}

std::string category_prompt(const std::string& category) {
  return "A sketch of " + category;
}

std::vector<std::string> build_category_prompts(const CaptionRecord& record) {
  validate_caption(record);
  std::vector<std::string> prompts;
  prompts.reserve(record.categories.size());
  for (const auto& c : record.categories) prompts.push_back(category_prompt(c));
  return prompts;
}

}  // namespace sketchseg
