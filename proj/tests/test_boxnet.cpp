#include <boxguide/boxnet.hpp>

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace boxguide;

namespace {

std::vector<nn::Matrix> random_maps(std::mt19937_64& rng) {
  return {gaussian_matrix(256, 64, rng), gaussian_matrix(64, 64, rng), gaussian_matrix(64, 32, rng),
          gaussian_matrix(256, 32, rng)};
}

const std::vector<Resolution> kHw = {{16, 16}, {8, 8}, {8, 8}, {16, 16}};

std::vector<EntitySpan> spans_of(const std::string& prompt) {
  return parse_entities(prompt, EntityLexicon::builtin()).spans;
}

}  // namespace

TEST_CASE("feature extraction shape and constant activations") {
  const BoxNet net(BoxNetConfig{}, 1);
  std::mt19937_64 rng(2);
  const FeatureTensor f = net.extract_features(random_maps(rng), kHw, 7);
  CHECK(f.data.rows() == 256);
  CHECK(f.data.cols() == 64);
  CHECK(f.hw == Resolution{16, 16});
  CHECK(f.source_timestep == 7);
  CHECK(f.source_resolutions == kHw);

  // Constant maps: every position equals value_row * W + b.
  std::vector<nn::Matrix> constant;
  Eigen::RowVectorXf concat(192);
  int offset = 0;
  for (std::size_t i = 0; i < kHw.size(); ++i) {
    const int c = i < 2 ? 64 : 32;
    const Eigen::RowVectorXf v = Eigen::RowVectorXf::LinSpaced(c, -1.0f + i, 1.0f + i);
    constant.push_back(v.replicate(kHw[i].height * kHw[i].width, 1));
    concat.segment(offset, c) = v;
    offset += c;
  }
  const FeatureTensor cf = net.extract_features(constant, kHw, 1);
  const nn::Matrix& w = net.params().get("input_proj.w").value();
  const nn::Matrix& b = net.params().get("input_proj.b").value();
  const Eigen::RowVectorXf expect = concat * w + b;
  for (nn::Index r = 0; r < cf.data.rows(); ++r)
    CHECK((cf.data.value().row(r) - expect).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("feature extraction input errors") {
  const BoxNet net;
  std::mt19937_64 rng(3);
  CHECK_THROWS_AS(net.extract_features({}, {}, 1), std::invalid_argument);
  auto maps = random_maps(rng);
  maps[0](5, 5) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(net.extract_features(maps, kHw, 1), std::invalid_argument);
  auto short_maps = random_maps(rng);
  short_maps.pop_back();
  CHECK_THROWS_AS(net.extract_features(short_maps, {kHw[0], kHw[1], kHw[2]}, 1), std::invalid_argument);
}

TEST_CASE("entity queries pad with the placeholder") {
  const ToyStack stack;
  const BoxNet net;
  const int M = net.config().max_entities;
  const nn::Matrix& placeholder = net.params().get("placeholder").value();

  const EntityQuerySet empty = net.encode_entities({}, stack.text());
  CHECK(empty.n_entities == 0);
  REQUIRE(empty.embeddings.rows() == M);
  for (int r = 0; r < M; ++r) CHECK(empty.embeddings.value().row(r) == placeholder);

  const auto spans = spans_of("a red square and a red square");
  const EntityQuerySet two = net.encode_entities(spans, stack.text());
  CHECK(two.n_entities == 2);
  CHECK(two.embeddings.value().row(0) == two.embeddings.value().row(1));
  CHECK(two.embeddings.value().row(0) == stack.text().pooled("a red square"));
  for (int r = 2; r < M; ++r) CHECK(two.embeddings.value().row(r) == placeholder);
  CHECK(two.category_ids.size() == 2);
  CHECK(two.category_ids[0] == entity_category(spans[0], EntityLexicon::builtin()));

  std::vector<EntitySpan> many(M + 1, spans[0]);
  CHECK_THROWS_AS(net.encode_entities(many, stack.text()), std::invalid_argument);
}

TEST_CASE("untrained boxes are valid, deterministic and count N") {
  const ToyStack stack;
  std::mt19937_64 rng(4);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const BoxNet net(BoxNetConfig{}, seed);
    const FeatureTensor f = net.extract_features(random_maps(rng), kHw, 5);
    for (const char* prompt : {"a red square", "a red square, a blue circle and a green triangle"}) {
      const auto q = net.encode_entities(spans_of(prompt), stack.text());
      const auto boxes = net.predict_boxes(f, q);
      CHECK(static_cast<int>(boxes.size()) == q.n_entities);
      for (const auto& b : boxes) CHECK(is_valid(b));
      CHECK(boxes == net.predict_boxes(f, q));
    }
  }
}

TEST_CASE("swapping the two entity queries swaps the boxes") {
  const ToyStack stack;
  const BoxNet net(BoxNetConfig{}, 9);
  std::mt19937_64 rng(5);
  const FeatureTensor f = net.extract_features(random_maps(rng), kHw, 5);
  const auto ab = net.predict_boxes(f, net.encode_entities(spans_of("a red square and a blue circle"), stack.text()));
  const auto ba = net.predict_boxes(f, net.encode_entities(spans_of("a blue circle and a red square"), stack.text()));
  REQUIRE(ab.size() == 2);
  REQUIRE(ba.size() == 2);
  for (int i = 0; i < 2; ++i) {
    CHECK(ab[i].cx == doctest::Approx(ba[1 - i].cx).epsilon(1e-5));
    CHECK(ab[i].cy == doctest::Approx(ba[1 - i].cy).epsilon(1e-5));
    CHECK(ab[i].w == doctest::Approx(ba[1 - i].w).epsilon(1e-5));
    CHECK(ab[i].h == doctest::Approx(ba[1 - i].h).epsilon(1e-5));
  }
}

TEST_CASE("mismatched inputs are rejected") {
  const ToyStack stack;
  const BoxNet net;
  BoxNetConfig small;
  small.feature_hw = {8, 8};
  const BoxNet other(small);
  std::mt19937_64 rng(6);
  const FeatureTensor f = other.extract_features(random_maps(rng), kHw, 1);
  CHECK_THROWS_AS(net.predict_boxes(f, net.encode_entities(spans_of("a red square"), stack.text())),
                  std::invalid_argument);
}

TEST_CASE("checkpoint round trip keeps predictions") {
  BoxNetCheckpoint ckpt;
  ckpt.stack = std::make_unique<ToyStack>(ToyStackConfig{}, 2);
  ckpt.boxnet = std::make_unique<BoxNet>(BoxNetConfig{}, 3);
  ckpt.meta.steps = 12;
  ckpt.meta.dataset_id = "abc";
  const auto path = (std::filesystem::temp_directory_path() / "boxguide_boxnet_unit.ckpt").string();
  ckpt.save(path);
  const BoxNetCheckpoint back = BoxNetCheckpoint::load(path);
  CHECK(back.meta.steps == 12);
  CHECK(back.meta.dataset_id == "abc");
  CHECK(back.config_hash() == ckpt.config_hash());
  CHECK(back.boxnet->params().checksum() == ckpt.boxnet->params().checksum());
  CHECK(back.stack->checksum() == ckpt.stack->checksum());
  CHECK_THROWS_AS(BoxNetCheckpoint::load(path + ".missing"), std::runtime_error);
}
