#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "sketchseg/text.hpp"

using namespace sketchseg;

TEST_CASE("category prompts follow the template and preserve order") {
  CaptionRecord rec{"s1", "a cat next to a chair", {"cat", "chair"}};
  auto prompts = build_category_prompts(rec);
  CHECK(prompts == std::vector<std::string>{"A sketch of cat", "A sketch of chair"});

  CaptionRecord single{"s2", "the sun", {"sun"}};
  CHECK(build_category_prompts(single) == std::vector<std::string>{"A sketch of sun"});
}

TEST_CASE("prompts for a valid record are unique") {
  CaptionRecord rec{"s3", "stuff", {"a", "b", "c"}};
  auto prompts = build_category_prompts(rec);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    for (std::size_t j = i + 1; j < prompts.size(); ++j) CHECK(prompts[i] != prompts[j]);
  }
}

TEST_CASE("embed_text is deterministic and unit norm") {
  TextEncoder enc(32, 1234);
  Matf a = enc.embed("a dog chasing a ball");
  Matf b = enc.embed("a dog chasing a ball");
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(a.row(0).norm() == doctest::Approx(1.0f).epsilon(1e-6));
}

TEST_CASE("embed_text rejects empty text") {
  TextEncoder enc(32, 1);
  CHECK_THROWS_AS(enc.embed(""), std::invalid_argument);
  CHECK_THROWS_AS(enc.embed("   "), std::invalid_argument);
}

TEST_CASE("100 distinct prompts are pairwise separated at d = 32") {
  TextEncoder enc(32, 77);
  std::vector<Matf> vecs;
  for (int i = 0; i < 100; ++i) {
    vecs.push_back(enc.embed("A sketch of thing" + std::to_string(i)));
  }
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    for (std::size_t j = i + 1; j < vecs.size(); ++j) {
      const float cosine = vecs[i].row(0).dot(vecs[j].row(0));
      CHECK(cosine < 0.99f);
    }
  }
}

TEST_CASE("different seeds give different embeddings") {
  TextEncoder a(32, 1);
  TextEncoder b(32, 2);
  CHECK((a.embed("a tree") - b.embed("a tree")).cwiseAbs().maxCoeff() > 1e-4f);
}

TEST_CASE("precomputed table entries win and are re-normalized") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "sketchseg_embed_table.jsonl";
  {
    std::ofstream out(path);
    out << R"({"text": "A sketch of cat", "vector": [2, 0, 0, 0]})" << "\n";
  }
  TextEncoder enc(4, 5);
  enc.load_precomputed(path.string());
  Matf v = enc.embed("A sketch of cat");
  CHECK(v(0, 0) == doctest::Approx(1.0f));  // normalized from [2, 0, 0, 0]
  CHECK(v(0, 1) == doctest::Approx(0.0f));

  // Missing entries fall back to the stand-in.
  Matf w = enc.embed("A sketch of dog");
  CHECK(w.row(0).norm() == doctest::Approx(1.0f).epsilon(1e-6));
  CHECK((w - v).cwiseAbs().maxCoeff() > 1e-4f);
}

TEST_CASE("precomputed table rejects dimension mismatches") {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "sketchseg_embed_bad.jsonl";
  {
    std::ofstream out(path);
    out << R"({"text": "x", "vector": [1, 2, 3]})" << "\n";
  }
  TextEncoder enc(4, 5);
  CHECK_THROWS_AS(enc.load_precomputed(path.string()), std::runtime_error);
}
