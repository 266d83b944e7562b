#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "foodweb/webdata.hpp"

using namespace foodweb;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("webdata_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) {
    fs::path p = path / name;
    std::ofstream out(p);
    out << content;
    return p.string();
  }
};

Taxonomy tax(std::initializer_list<const char*> ranks) {
  Taxonomy t;
  int i = 0;
  for (const char* r : ranks) t.ranks[i++] = r;
  return t;
}

// 4-node diet CSV: a,b basal; c,d consumers; c<->d mutual.
const char* kDiet =
    "a,b,c,d\n"
    "0,0,60,50\n"
    "0,0,30,0\n"
    "0,0,0,50\n"
    "0,0,10,0\n";

const char* kMeta =
    "name,adult_biomass,population_biomass,annual_harvest,ingestion_factor,"
    "carrying_capacity,tax_domain,tax_kingdom,tax_phylum,tax_class,tax_order,"
    "tax_family,tax_genus,tax_species\n"
    "a,0.001,100,0,0.9,,E,P,O,,,,,\n"
    "b,0.002,50,0,0.5,,,,,,,,,\n"
    "c,0.5,200,10,0.5,70,E,A,M,B,M,M,M,e\n"
    "d,2,80,4,0.25,,E,A,C,A,C,E,E,c\n";

}  // namespace

TEST_CASE("taxonomic distance: rank-count convention") {
  Taxonomy a = tax({"E", "A", "C", "M", "C", "F", "G", "S"});
  CHECK(taxonomic_distance(a, a) == 0);
  Taxonomy b = tax({"E2", "A2", "C2", "M2", "C2", "F2", "G2", "S2"});
  CHECK(taxonomic_distance(a, b) == 8);
  // shared domain+kingdom+phylum, rest differ
  Taxonomy c = tax({"E", "A", "C", "X", "X", "X", "X", "X"});
  CHECK(taxonomic_distance(a, c) == 5);
  // missing rank differs from everything, including another missing rank
  Taxonomy m1 = a, m2 = a;
  m1.ranks[3] = "";
  CHECK(taxonomic_distance(m1, a) == 1);
  m2.ranks[3] = "";
  m2.ranks[7] = "zz";
  CHECK(taxonomic_distance(m1, m2) == 2);  // missing-vs-missing counts
  // ... except two fully identical tuples
  CHECK(taxonomic_distance(m1, m1) == 0);
  // symmetry and bounds
  CHECK(taxonomic_distance(a, c) == taxonomic_distance(c, a));
  CHECK(taxonomic_distance(a, b) <= 8);
}

TEST_CASE("diet matrix parsing") {
  TempDir td;
  SUBCASE("basic square matrix") {
    DietMatrix m = load_diet_percentages(td.file("d.csv", kDiet));
    CHECK(m.n == 4);
    CHECK(m.names[2] == "c");
    CHECK(m.pct(0, 2) == doctest::Approx(60));
    CHECK(m.pct(3, 2) == doctest::Approx(10));
  }
  SUBCASE("row labels accepted") {
    DietMatrix m = load_diet_percentages(td.file(
        "d.csv", ",a,b\na,0,5\nb,3,0\n"));
    CHECK(m.n == 2);
    CHECK(m.pct(0, 1) == doctest::Approx(5));
  }
  SUBCASE("zero matrix parses; classification fails later, not here") {
    DietMatrix m = load_diet_percentages(td.file("d.csv", "a,b\n0,0\n0,0\n"));
    CHECK(m.n == 2);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(2, 2);
    CHECK_THROWS_WITH_AS(classify_nodes(y), "node 1 has no links",
                         ValidationError);
  }
  SUBCASE("negative percentage rejected with coordinates") {
    std::string p = td.file("d.csv", "a,b,c\n0,1,2\n-5,0,1\n1,1,0\n");
    CHECK_THROWS_WITH_AS(load_diet_percentages(p),
                         doctest::Contains("negative percentage at (2,1)"),
                         ParseError);
  }
  SUBCASE("non-square rejected") {
    std::string p = td.file("d.csv", "a,b,c\n0,1,2\n1,0,1\n");
    CHECK_THROWS_AS(load_diet_percentages(p), ParseError);
  }
  SUBCASE("duplicate node name rejected") {
    std::string p = td.file("d.csv", "a,a\n0,1\n1,0\n");
    CHECK_THROWS_AS(load_diet_percentages(p), ParseError);
  }
  SUBCASE("missing metadata column rejected by name") {
    DietMatrix m = load_diet_percentages(td.file("d.csv", kDiet));
    std::string p = td.file("m.csv", "name,adult_biomass\na,1\n");
    CHECK_THROWS_WITH_AS(load_node_metadata(p, m),
                         doctest::Contains("population_biomass"), ParseError);
  }
  SUBCASE("full metadata load") {
    DietMatrix m = load_diet_matrix(td.file("d.csv", kDiet),
                                    td.file("m.csv", kMeta));
    CHECK(m.meta[2].adult_biomass == doctest::Approx(0.5));
    CHECK(m.meta[2].carrying_capacity.value() == doctest::Approx(70));
    CHECK_FALSE(m.meta[3].carrying_capacity.has_value());
    CHECK(m.meta[1].taxonomy.ranks[0].empty());
  }
}

TEST_CASE("column rescaling") {
  DietMatrix m;
  m.n = 3;
  m.names = {"a", "b", "c"};
  m.pct.setZero(3, 3);
  SUBCASE("column summing to 131.5 rescaled to 100") {
    m.pct(0, 2) = 100.0;
    m.pct(1, 2) = 31.5;
    DietMatrix out = rescale_columns(m);
    CHECK(out.pct(0, 2) == doctest::Approx(100.0 * 100.0 / 131.5));
    CHECK(out.pct(0, 2) + out.pct(1, 2) == doctest::Approx(100).epsilon(1e-9));
  }
  SUBCASE("all-zero column unchanged") {
    DietMatrix out = rescale_columns(m);
    CHECK(out.pct.col(0).isZero());
  }
  SUBCASE("column already at 100 unchanged to 1e-12") {
    m.pct(0, 1) = 60.0;
    m.pct(2, 1) = 40.0;
    DietMatrix out = rescale_columns(m);
    CHECK(out.pct(0, 1) == doctest::Approx(60).epsilon(1e-12));
  }
  SUBCASE("diagonal excluded from the sum and zeroed") {
    m.pct(1, 1) = 50.0;  // cannibalism entry
    m.pct(0, 1) = 25.0;
    m.pct(2, 1) = 25.0;
    DietMatrix out = rescale_columns(m);
    CHECK(out.pct(1, 1) == 0.0);
    CHECK(out.pct(0, 1) == doctest::Approx(50));
  }
  SUBCASE("idempotence") {
    m.pct(0, 1) = 13.0;
    m.pct(2, 1) = 55.0;
    m.pct(0, 2) = 90.5;
    DietMatrix once = rescale_columns(m);
    DietMatrix twice = rescale_columns(once);
    CHECK((once.pct - twice.pct).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("consumption derivation") {
  DietMatrix m;
  m.n = 2;
  m.names = {"a", "b"};
  m.pct.setZero(2, 2);
  m.pct(0, 1) = 10.0;
  m.meta.resize(2);
  m.meta[1].population_biomass = 200.0;
  m.meta[1].adult_biomass = 4.0;
  m.meta[1].ingestion_factor = 0.5;
  SUBCASE("product formula") {
    Eigen::MatrixXd c = derive_consumption(m, ResponseMode::population);
    CHECK(c(0, 1) == doctest::Approx(200.0 * 0.5 * 0.10));  // = 10
    CHECK(c(1, 0) == 0.0);
  }
  SUBCASE("mode switch changes only the biomass factor") {
    Eigen::MatrixXd cp = derive_consumption(m, ResponseMode::population);
    Eigen::MatrixXd ca = derive_consumption(m, ResponseMode::per_adult);
    CHECK(cp(0, 1) / ca(0, 1) == doctest::Approx(200.0 / 4.0));
  }
  SUBCASE("zero diet share maps to zero regardless of metadata") {
    // empty column: node is not a consumer, so missing metadata is fine
    m.pct.setZero();
    m.meta[1].population_biomass = 0.0;
    Eigen::MatrixXd c;
    CHECK_NOTHROW(c = derive_consumption(m, ResponseMode::population));
    CHECK(c.isZero());
  }
  SUBCASE("missing biomass for a consumer names the node") {
    m.meta[1].population_biomass = 0.0;
    CHECK_THROWS_WITH_AS(derive_consumption(m, ResponseMode::population),
                         doctest::Contains("'b'"), ValidationError);
  }
}

TEST_CASE("response transform") {
  Eigen::MatrixXd c(1, 3);
  SUBCASE("fixed points and exact roots") {
    c << 0.0, 1.0, std::pow(2.0, 20);
    Eigen::MatrixXd y = transform_response(c, ResponseMode::population);
    CHECK(y(0, 0) == 0.0);
    CHECK(y(0, 1) == doctest::Approx(1.0));
    CHECK(y(0, 2) == doctest::Approx(2.0));
    c(0, 2) = std::pow(2.0, 10);
    y = transform_response(c, ResponseMode::per_adult);
    CHECK(y(0, 2) == doctest::Approx(2.0));
  }
  SUBCASE("monotonicity on positive values") {
    c << 0.3, 0.7, 5.0;
    Eigen::MatrixXd y = transform_response(c, ResponseMode::population);
    CHECK(y(0, 0) < y(0, 1));
    CHECK(y(0, 1) < y(0, 2));
  }
}

TEST_CASE("node classification") {
  SUBCASE("2-node chain") {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(2, 2);
    y(0, 1) = 0.5;
    NodePartition p = classify_nodes(y);
    CHECK(p.basal == std::vector<int>{0});
    CHECK(p.top == std::vector<int>{1});
    CHECK(p.middle.empty());
  }
  SUBCASE("3-cycle: all middle") {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 3);
    y(0, 1) = y(1, 2) = y(2, 0) = 1.0;
    NodePartition p = classify_nodes(y);
    CHECK(p.middle.size() == 3);
    CHECK(p.basal.empty());
    CHECK(p.top.empty());
  }
  SUBCASE("isolated node rejected") {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 3);
    y(0, 1) = 1.0;
    CHECK_THROWS_WITH_AS(classify_nodes(y), "node 3 has no links",
                         ValidationError);
  }
}

TEST_CASE("dyad classification") {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(4, 4);
  y(0, 1) = y(1, 0) = 0.3;  // mutual
  y(0, 2) = 0.4;            // send-only (i<j)
  y(3, 2) = 0.2;            // receive-only as (2,3)
  DyadPartition d = classify_dyads(y);
  CHECK(d.mutual == std::vector<std::pair<int, int>>{{0, 1}});
  CHECK(d.send_only == std::vector<std::pair<int, int>>{{0, 2}});
  CHECK(d.receive_only == std::vector<std::pair<int, int>>{{2, 3}});
  CHECK(d.n_links() == 4);
}

TEST_CASE("covariate construction") {
  TempDir td;
  DietMatrix m = load_diet_matrix(td.file("d.csv", kDiet),
                                  td.file("m.csv", kMeta));
  SUBCASE("full pipeline with all covariates") {
    ReducedWeb web = assemble_reduced_web(m, ResponseMode::population,
                                          all_covariate_names());
    CHECK(web.L() == 5);
    CHECK(web.n_links() == 5);  // 1 mutual pair + 3 singles
    CHECK(web.pairs.size() == 1);
    // centering exactness
    for (int c = 1; c <= web.L(); ++c) {
      double mean = 0.0;
      for (const auto& lk : web.links) mean += lk.x(c);
      mean /= web.n_links();
      CHECK(std::abs(mean) < 1e-10);
    }
    // response positivity on modelled links
    for (const auto& lk : web.links) CHECK(lk.y > 0.0);
    // symmetric covariate on the mutual pair
    int tix = web.covariate_index("taxdist") + 1;
    auto [la, lb] = web.pairs[0];
    CHECK(web.links[la].x(tix) == doctest::Approx(web.links[lb].x(tix)));
  }
  SUBCASE("empty subset: intercept-only design") {
    ReducedWeb web = assemble_reduced_web(m, ResponseMode::population, {});
    CHECK(web.L() == 0);
    for (const auto& lk : web.links) {
      CHECK(lk.x.size() == 1);
      CHECK(lk.x(0) == 1.0);
    }
  }
  SUBCASE("single covariate subset") {
    ReducedWeb web = assemble_reduced_web(m, ResponseMode::population,
                                          {"pred_harvest"});
    CHECK(web.L() == 1);
    CHECK(web.covariate_names[0] == "pred_harvest");
  }
  SUBCASE("unknown covariate rejected") {
    CHECK_THROWS_AS(
        assemble_reduced_web(m, ResponseMode::population, {"bogus"}),
        ValidationError);
  }
  SUBCASE("log shift applied only to columns containing a zero") {
    // harvest has zeros (delta=1); adult biomass is all-positive (delta=0)
    ReducedWeb web = assemble_reduced_web(
        m, ResponseMode::population, {"prey_biomass", "prey_harvest"});
    // reconstruct expectation for one link
    const Link& lk = web.links[0];
    double raw_b = m.meta[lk.prey].adult_biomass;
    double logb = std::log(raw_b);
    double mean_b = 0.0;
    for (const auto& l2 : web.links)
      mean_b += std::log(m.meta[l2.prey].adult_biomass);
    mean_b /= web.n_links();
    CHECK(lk.x(1) == doctest::Approx(logb - mean_b));
    double logh = std::log(m.meta[lk.prey].annual_harvest + 1.0);
    double mean_h = 0.0;
    for (const auto& l2 : web.links)
      mean_h += std::log(m.meta[l2.prey].annual_harvest + 1.0);
    mean_h /= web.n_links();
    CHECK(lk.x(2) == doctest::Approx(logh - mean_h));
  }
  SUBCASE("hand check of shift+center on a {0, e-1} column") {
    Eigen::VectorXd raw(2);
    raw << 0.0, std::exp(1.0) - 1.0;
    // with the +1 shift, logs are {0, 1}; centered {-0.5, +0.5}
    double l0 = std::log(raw(0) + 1.0), l1 = std::log(raw(1) + 1.0);
    double mean = (l0 + l1) / 2.0;
    CHECK(l0 - mean == doctest::Approx(-0.5));
    CHECK(l1 - mean == doctest::Approx(0.5));
  }
  SUBCASE("partition completeness and link accounting") {
    ReducedWeb web = assemble_reduced_web(m, ResponseMode::population, {});
    CHECK(web.nodes.basal.size() + web.nodes.middle.size() +
              web.nodes.top.size() ==
          static_cast<size_t>(web.n));
    CHECK(2 * web.dyads.mutual.size() + web.dyads.send_only.size() +
              web.dyads.receive_only.size() ==
          static_cast<size_t>(web.n_links()));
  }
  SUBCASE("mode switch keeps partitions, changes y") {
    ReducedWeb wp = assemble_reduced_web(m, ResponseMode::population, {});
    ReducedWeb wa = assemble_reduced_web(m, ResponseMode::per_adult, {});
    CHECK(wp.nodes.basal == wa.nodes.basal);
    CHECK(wp.dyads.mutual == wa.dyads.mutual);
    CHECK(wp.links[0].y != doctest::Approx(wa.links[0].y));
  }
}

TEST_CASE("reduced web file round trip") {
  TempDir td;
  DietMatrix m = load_diet_matrix(td.file("d.csv", kDiet),
                                  td.file("m.csv", kMeta));
  ReducedWeb web = assemble_reduced_web(m, ResponseMode::population,
                                        all_covariate_names());
  std::string p = (td.path / "web.csv").string();
  write_reduced_web(web, p);
  ReducedWeb back = read_reduced_web(p, ResponseMode::population);
  REQUIRE(back.n_links() == web.n_links());
  CHECK(back.covariate_names == web.covariate_names);
  CHECK(back.dyads.mutual.size() == web.dyads.mutual.size());
  CHECK(back.nodes.basal.size() == web.nodes.basal.size());
  for (int l = 0; l < web.n_links(); ++l) {
    CHECK(back.names[back.links[l].prey] == web.names[web.links[l].prey]);
    CHECK(back.links[l].y == doctest::Approx(web.links[l].y).epsilon(1e-14));
    for (int c = 0; c <= web.L(); ++c)
      CHECK(back.links[l].x(c) ==
            doctest::Approx(web.links[l].x(c)).epsilon(1e-14));
  }
  // cardinality report is written and parseable
  std::string sp = (td.path / "web.sets.txt").string();
  write_cardinality_report(web, sp);
  std::ifstream in(sp);
  std::string line;
  std::getline(in, line);
  CHECK(line == "n_nodes = 4");
}
