#include <gtest/gtest.h>

#include <filesystem>

#include "sbw/io.hpp"

namespace {

using nlohmann::json;

sbw::GridField sample_field(sbw::Arity arity) {
  sbw::Grid g = sbw::Grid::cube(2, -1.0, 0.5, 4);
  if (arity == sbw::Arity::TXY) g.time = sbw::Axis{0.0, 1.0, 3};
  sbw::GridField f = sbw::GridField::hypercomplex(g, 2, arity);
  double v = 0.1;
  for (auto& z : f.data()) {
    z = {v, -v / 3.0};
    v *= -1.37;
  }
  return f;
}

}  // namespace

TEST(FieldDump, RoundTripIsBitExact) {
  for (auto arity : {sbw::Arity::X, sbw::Arity::XY, sbw::Arity::TXY}) {
    const auto f = sample_field(arity);
    const std::string bytes = sbw::encode_field(f);
    const auto g = sbw::decode_field(bytes);
    EXPECT_EQ(g.arity(), f.arity());
    EXPECT_EQ(g.level(), 2u);
    ASSERT_EQ(g.data().size(), f.data().size());
    for (std::size_t i = 0; i < f.data().size(); ++i) EXPECT_EQ(g.data()[i], f.data()[i]);
    EXPECT_EQ(sbw::encode_field(g), bytes);
  }
}

TEST(FieldDump, HeaderLayout) {
  const auto bytes = sbw::encode_field(sample_field(sbw::Arity::X));
  // magic, 6 u32 words, 2 axes of 24 bytes, 2 u64, 16 nodes x 4 coefficients x 16 bytes
  EXPECT_EQ(bytes.size(), 4u + 24u + 48u + 16u + 16u * 4u * 16u);
  EXPECT_EQ(bytes.substr(0, 4), "SBWF");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
}

TEST(FieldDump, RejectsDamagedInput) {
  const std::string good = sbw::encode_field(sample_field(sbw::Arity::XY));
  EXPECT_THROW(sbw::decode_field("SBWX" + good.substr(4)), sbw::ValidationError);
  EXPECT_THROW(sbw::decode_field(good.substr(0, good.size() - 1)), sbw::ValidationError);
  EXPECT_THROW(sbw::decode_field(good + "x"), sbw::ValidationError);
  std::string bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(sbw::decode_field(bad_version), sbw::ValidationError);
}

TEST(Config, ShippedConfigsParseAndEcho) {
  for (const auto& e : std::filesystem::directory_iterator(std::string(SBW_SOURCE_DIR) + "/configs")) {
    if (e.path().extension() != ".json") continue;
    SCOPED_TRACE(e.path().string());
    const auto wc = sbw::load_case(e.path().string());
    const auto again = sbw::parse_case(sbw::case_json(wc));
    EXPECT_EQ(sbw::case_json(again), sbw::case_json(wc));
  }
}

TEST(Config, Case1Values) {
  const auto wc = sbw::load_case(std::string(SBW_SOURCE_DIR) + "/configs/case1.json");
  EXPECT_EQ(wc.spec.alpha, sbw::cplx(4.0));
  EXPECT_EQ(wc.spec.box.count, 11u);
  ASSERT_EQ(wc.atoms.size(), 1u);
  EXPECT_EQ(wc.atoms[0].lambda[2], sbw::cplx(0.05));
  EXPECT_EQ(wc.collar, 4u);
  EXPECT_EQ(wc.xi_rule, sbw::XiRule::Consistent);
}

TEST(Config, ComplexNumbersAsPairs) {
  json j = {{"problem", {{"gamma", {1.0, 0.5}}}}, {"atoms", {{{"lambda", {1, 0.5, {0.1, 0.2}, 0}}, {"p", 1}}}}};
  const auto wc = sbw::parse_case(j);
  EXPECT_EQ(wc.spec.gamma, sbw::cplx(1.0, 0.5));
  EXPECT_EQ(wc.atoms[0].lambda[2], sbw::cplx(0.1, 0.2));
}

TEST(Config, RejectsBadInput) {
  const json atom = {{"lambda", {1, 0.5, 0.05, 0}}, {"p", 1}};
  auto bad = [](const json& j) { EXPECT_THROW(sbw::parse_case(j), sbw::ValidationError) << j.dump(); };
  bad(json::object());
  bad({{"atoms", json::array()}});
  bad({{"atoms", {atom}}, {"extra", 1}});
  bad({{"atoms", {atom}}, {"problem", {{"alhpa", 1}}}});
  bad({{"atoms", {{{"lambda", {1, 0.5, 0.05, 0}}}}}});
  bad({{"atoms", {{{"lambda", {1, 0.5}}, {"p", 1}}}}});
  bad({{"atoms", {atom}}, {"xi_rule", "other"}});
  bad({{"atoms", {atom}}, {"discretization", {{"tau", 0}}}});
  bad({{"atoms", {atom}}, {"discretization", {{"kappa", "x"}}}});
  bad({{"atoms", {atom}}, {"problem", {{"alpha", "four"}}}});
  json half_xi = {{"atoms", {atom, {{"lambda", {2, 0.5, 0.05, 0}}, {"p", 1}, {"xi", 1}}}}};
  bad(half_xi);
  EXPECT_THROW(sbw::load_case("/nonexistent/case.json"), sbw::ValidationError);
}
