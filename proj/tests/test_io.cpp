#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>

#include "kamp/io.hpp"

using namespace kamp;

namespace {

std::string temp(const std::string &name, const std::string &content) {
  const std::string p = ::testing::TempDir() + name;
  std::ofstream(p) << content;
  return p;
}

} // namespace

TEST(Csv, ReadsWithAndWithoutHeader) {
  const Matrix a = read_design_csv(temp("a.csv", "1,2\n3,4\n5,6\n"));
  ASSERT_EQ(a.rows(), 3);
  ASSERT_EQ(a.cols(), 2);
  EXPECT_EQ(a(2, 1), 6.0);
  const Matrix b = read_design_csv(temp("b.csv", "x1,x2\n1,2\n\n3,4\n"));
  EXPECT_EQ(b.rows(), 2);
  const Vector y = read_vector_csv(temp("y.csv", "y\n1.5\n-2\n"));
  EXPECT_EQ(y.size(), 2);
  EXPECT_EQ(y(1), -2.0);
}

TEST(Csv, ErrorsNameTheLine) {
  try {
    read_design_csv(temp("bad.csv", "1,2\n3,oops\n"));
    FAIL();
  } catch (const ValidationError &e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
  try {
    read_design_csv(temp("ragged.csv", "1,2\n3,4\n5\n"));
    FAIL();
  } catch (const ValidationError &e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_vector_csv(temp("two.csv", "1,2\n")), ValidationError);
  EXPECT_THROW(read_design_csv("/nonexistent/file.csv"), ValidationError);
}

TEST(Binary, RoundTripAndHeader) {
  const Matrix x = generate_design(7, 3, 1);
  const std::string p = ::testing::TempDir() + "m.bin";
  write_binary_matrix(p, x);
  EXPECT_EQ(read_matrix(p), x);
  std::ifstream in(p, std::ios::binary);
  char head[16];
  in.read(head, 16);
  EXPECT_EQ(std::string(head, 8), "KAMP0001");
  EXPECT_EQ(head[8], 7);
  EXPECT_EQ(head[12], 3);
  in.seekg(0, std::ios::end);
  EXPECT_EQ(static_cast<long>(in.tellg()), 16 + 8 * 21);
  const std::string bad = temp("bad.bin", "KAMP0001\x02\0\0\0");
  EXPECT_THROW(read_binary_matrix(bad), ValidationError);
}

TEST(Prior, Strings) {
  EXPECT_NEAR(parse_prior(0.2, "exp:2").star_second_moment(), 0.5, 1e-12);
  EXPECT_EQ(std::get<PointMass>(parse_prior(0.1, "point:1.9").star()).location, 1.9);
  const auto g = std::get<GammaMixture>(parse_prior(0.1, "gamma:0.1;5/0.25;0.75/2").star());
  EXPECT_EQ(g.shapes, (std::vector<double>{0.1, 5.0}));
  EXPECT_EQ(g.weights, (std::vector<double>{0.25, 0.75}));
  EXPECT_EQ(g.rate, 2.0);
  const std::string tab = temp("tab.csv", "x,F\n0.5,0.2\n1,0.6\n3,1\n");
  EXPECT_NEAR(parse_prior(0.3, "tabulated:" + tab).star_cdf(1.0), 0.6, 1e-15);
  EXPECT_THROW(parse_prior(0.2, "exp"), ValidationError);
  EXPECT_THROW(parse_prior(0.2, "cauchy:1"), ValidationError);
  EXPECT_THROW(parse_prior(0.2, "exp:abc"), ValidationError);
}

TEST(Prior, Json) {
  const PriorSpec p = prior_from_json(json::parse(
      R"({"epsilon": 0.1, "family": "gamma_mixture", "params": {"shapes": [1, 2], "weights": [0.5, 0.5]}})"));
  EXPECT_EQ(p.epsilon(), 0.1);
  EXPECT_NEAR(p.star_second_moment(), 0.5 * 2 + 0.5 * 6, 1e-12);
  EXPECT_THROW(prior_from_json(json::parse(R"({"epsilon": 0.1, "family": "exponential", "params": {"rate": "x"}})")),
               ValidationError);
  EXPECT_NEAR(prior_from_json(json::parse(R"("exp:1")"), 0.3).epsilon(), 0.3, 0);
}

TEST(Experiment, JsonConfig) {
  const ExperimentConfig c = experiment_from_json(json::parse(R"({
    "n": 200, "p": 100, "sigma": 0.3, "replicates": 5, "master_seed": 9,
    "comparison_mode": "nonzero_at_lambda",
    "prior": {"epsilon": 0.1, "family": "point", "params": {"location": 2}},
    "knockoff": {"rho": 0.5, "q": 0.1, "t0": 0.2, "pi0_mode": "truncated"},
    "filter_grid": {"count": 50, "floor": 0.2}, "curves": true, "power_q": [0.1, 0.2]})"));
  EXPECT_EQ(c.n, 200);
  EXPECT_EQ(c.p, 100);
  EXPECT_EQ(c.replicates, 5);
  EXPECT_EQ(c.master_seed, 9u);
  EXPECT_EQ(c.comparison_mode, ComparisonMode::nonzero_at_lambda);
  EXPECT_EQ(c.prior.epsilon(), 0.1);
  EXPECT_EQ(c.knockoff.pi0_mode, Pi0Mode::truncated_estimate);
  EXPECT_EQ(c.filter_grid.count, 50u);
  EXPECT_EQ(*c.filter_grid.floor, 0.2);
  EXPECT_TRUE(c.record_curves);
  EXPECT_EQ(c.power_q.size(), 2u);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"n": "many"})")), ValidationError);
  EXPECT_THROW(experiment_from_json(json::parse(R"({"replicates": 0})")), ValidationError);
}
