#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "support.hpp"

using namespace merf;

TEST_CASE("three-row survey parses to n=3, p=1") {
  const auto s = read_survey(support::table("area,y,x1\nA,1.5,2\nA,2.5,3\nB,0.5,-1\n"), "y", "area");
  CHECK(s.n() == 3);
  CHECK(s.p() == 1);
  CHECK(s.y == std::vector<double>{1.5, 2.5, 0.5});
  CHECK(s.X(2, 0) == -1.0);
  CHECK(s.area == std::vector<std::string>{"A", "A", "B"});
  CHECK(s.columns == std::vector<std::string>{"x1"});
}

TEST_CASE("survey ingestion errors map to their categories") {
  CHECK_THROWS_AS(read_survey(support::table("area,x1\nA,1\n"), "y", "area"), SchemaError);
  CHECK_THROWS_AS(read_survey(support::table("y,x1\n1,1\n"), "y", "area"), SchemaError);
  CHECK_THROWS_AS(read_survey(support::table("area,y,x1\nA,abc,1\n"), "y", "area"), ParseError);
  CHECK_THROWS_AS(read_survey(support::table("area,y,x1\nA,1,\n"), "y", "area"), ParseError);
  CHECK_THROWS_AS(read_survey(support::table("area,y,x1\n ,1,2\n"), "y", "area"), ParseError);
  CHECK_THROWS_AS(read_survey(support::table("area,y,x1\n"), "y", "area"), EmptyInputError);
  CHECK_THROWS_AS(support::table(""), EmptyInputError);
  CHECK_THROWS_AS(support::table("area,y\nA,1,2\n"), ParseError);
  CHECK_THROWS_AS(support::table("area,y\n\"A,1\n"), ParseError);
  CHECK_THROWS_AS(load_survey("/nonexistent/survey.csv", "y", "area"), IoError);
}

TEST_CASE("categorical covariate is one-hot encoded against its lexicographic first level") {
  const auto s = read_survey(support::table("area,y,x1,c\n"
                                            "A,1,0.5,b\n"
                                            "A,2,1.5,a\n"
                                            "B,3,2.5,c\n"
                                            "B,4,3.5,b\n"
                                            "C,5,4.5,a\n"),
                             "y", "area");
  REQUIRE(s.p() == 3);
  CHECK(s.columns == std::vector<std::string>{"x1", "c=b", "c=c"});
  Eigen::MatrixXd expected(5, 3);
  expected << 0.5, 1, 0,  //
      1.5, 0, 0,          //
      2.5, 0, 1,          //
      3.5, 1, 0,          //
      4.5, 0, 0;
  CHECK(s.X == expected);
  REQUIRE(s.schema.columns.size() == 2);
  CHECK(s.schema.columns[1].levels == std::vector<std::string>{"a", "b", "c"});

  const auto census = read_census(support::table("area,c,x1\nD,c,1\nA,a,2\n"), "area", s.schema);
  Eigen::MatrixXd ce(2, 3);
  ce << 1, 0, 1, 2, 0, 0;
  CHECK(census.X == ce);
  CHECK_THROWS_AS(read_census(support::table("area,c,x1\nD,z,1\n"), "area", s.schema), ConsistencyError);
  CHECK_THROWS_AS(read_census(support::table("area,x1\nD,1\n"), "area", s.schema), SchemaError);
}

TEST_CASE("quoted fields, CRLF endings and blank lines are handled") {
  const auto t = support::table("area,y,x1\r\n\"A, north\",\"1\",2\r\n\r\n\"B \"\"x\"\"\",3,4\r\n");
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0][0] == "A, north");
  CHECK(t.rows[1][0] == "B \"x\"");
  CHECK(t.rows[1][2] == "4");
}

TEST_CASE("align flags out-of-sample census areas") {
  SurveyDataset s;
  s.y = {1, 2, 3};
  s.area = {"A", "B", "A"};
  s.X = Eigen::MatrixXd::Zero(3, 1);
  s.columns = {"x"};
  CensusDataset c;
  c.area = {"C", "A", "A", "B", "C", "A"};
  c.X = Eigen::MatrixXd::Zero(6, 1);
  c.columns = {"x"};
  const AreaIndex index = align(s, c);
  CHECK(index.labels == std::vector<std::string>{"C", "A", "B"});
  CHECK(index.in_sample == std::vector<bool>{false, true, true});
  CHECK(index.n == std::vector<std::size_t>{0, 2, 1});
  CHECK(index.N == std::vector<std::size_t>{2, 3, 1});
  CHECK(index.size() == 3);
  CHECK(index.sampled() == 2);
  CHECK(align(s, c) == index);

  s.area[1] = "Z";
  CHECK_THROWS_AS(align(s, c), ConsistencyError);
  s.area[1] = "B";
  c.columns = {"w"};
  CHECK_THROWS_AS(align(s, c), ConsistencyError);
}

TEST_CASE("application-shaped layout: 51 areas, 21 in sample, 30 out of sample") {
  SurveyDataset s;
  CensusDataset c;
  s.columns = c.columns = {"x"};
  for (int i = 0; i < 51; ++i) {
    for (int k = 0; k < 10; ++k) c.area.push_back("m" + std::to_string(i));
    if (i % 5 < 2 || i == 50)
      for (int k = 0; k < 3; ++k) {
        s.area.push_back("m" + std::to_string(i));
        s.y.push_back(k);
      }
  }
  s.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(s.y.size()), 1);
  c.X = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(c.area.size()), 1);
  const AreaIndex index = align(s, c);
  CHECK(index.size() == 51);
  CHECK(index.sampled() == 21);
  CHECK(index.size() - index.sampled() == 30);
  for (std::size_t i = 0; i < index.size(); ++i) CHECK(index.in_sample[i] == (index.n[i] >= 1));
}

TEST_CASE("write_survey output re-parses to an identical dataset") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z(0.0, 1e3);
  SurveyDataset s;
  s.columns = {"x1", "x2"};
  s.schema = numeric_schema(s.columns);
  s.X.resize(40, 2);
  for (int j = 0; j < 40; ++j) {
    s.y.push_back(z(rng) / 3.0);
    s.area.push_back("area " + std::to_string(j % 7));
    s.X(j, 0) = z(rng) * 1e-7;
    s.X(j, 1) = z(rng) * 1e9;
  }
  std::ostringstream out;
  write_survey(out, s);
  const auto back = read_survey(support::table(out.str()), "y", "area");
  CHECK(back.y == s.y);
  CHECK(back.X == s.X);
  CHECK(back.area == s.area);
  CHECK(back.columns == s.columns);

  std::ostringstream cout_;
  CensusDataset c{s.X, s.area, s.columns};
  write_census(cout_, c);
  const auto cback = read_census(support::table(cout_.str()), "area", s.schema);
  CHECK(cback.X == c.X);
  CHECK(cback.area == c.area);
}

TEST_CASE("survey validation rejects malformed in-memory datasets") {
  SurveyDataset s;
  CHECK_THROWS_AS(s.validate(), EmptyInputError);
  s.y = {1, 2};
  s.area = {"A", "B"};
  s.X = Eigen::MatrixXd::Zero(2, 2);
  s.columns = {"x", "x"};
  CHECK_THROWS_AS(s.validate(), SchemaError);
  s.columns = {"x"};
  CHECK_THROWS_AS(s.validate(), ShapeError);
  s.columns = {"x", "w"};
  s.y[1] = std::nan("");
  CHECK_THROWS_AS(s.validate(), ParseError);
}

TEST_CASE("grouping with a prescribed order counts absent labels as zero") {
  const auto g = Grouping::with_order({"b", "b", "a"}, {"a", "b", "c"});
  CHECK(g.code == std::vector<std::size_t>{1, 1, 0});
  CHECK(g.counts == std::vector<std::size_t>{1, 2, 0});
  CHECK_THROWS_AS(Grouping::with_order({"z"}, {"a"}), ConsistencyError);
}

TEST_CASE("numbers are formatted to round-trip exactly") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 5000.0}) {
    const auto back = csv::parse_double(csv::format_double(v));
    REQUIRE(back);
    CHECK(*back == v);
  }
  CHECK_FALSE(csv::parse_double("nan"));
  CHECK_FALSE(csv::parse_double("1e999"));
  CHECK_FALSE(csv::parse_double("12abc"));
  CHECK(*csv::parse_double(" +4 ") == 4.0);
}
