#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "otlab/otlab.h"

namespace {

std::string temp_dir(const std::string& tag) {
  const auto dir =
      std::filesystem::temp_directory_path() / ("otlab_capi_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

otlab_measure* make_measure(const std::vector<double>& pts, int64_t n,
                            int32_t d, const double* weights = nullptr) {
  otlab_measure* m = nullptr;
  REQUIRE(otlab_measure_create(pts.data(), weights, n, d, &m) == OTLAB_OK);
  REQUIRE(m != nullptr);
  return m;
}

}  // namespace

TEST_CASE("version and error strings are always available") {
  REQUIRE(otlab_version() != nullptr);
  CHECK(std::strcmp(otlab_version(), "0.1.0") == 0);
  CHECK(otlab_last_error() != nullptr);
}

TEST_CASE("measures round-trip through creation and copy") {
  const std::vector<double> pts = {0.0, 1.0, 2.0, 3.0, 4.0, 5.0};
  otlab_measure* m = make_measure(pts, 3, 2);
  CHECK(otlab_measure_size(m) == 3);
  CHECK(otlab_measure_dim(m) == 2);

  std::vector<double> got_pts(6), got_w(3);
  REQUIRE(otlab_measure_copy_data(m, got_pts.data(), got_w.data()) ==
          OTLAB_OK);
  CHECK(got_pts == pts);
  for (double w : got_w) CHECK(w == doctest::Approx(1.0 / 3.0));
  otlab_measure_free(m);

  const double weights[3] = {0.2, 0.3, 0.5};
  otlab_measure* wm = make_measure(pts, 3, 2, weights);
  REQUIRE(otlab_measure_copy_data(wm, nullptr, got_w.data()) == OTLAB_OK);
  CHECK(got_w == std::vector<double>{0.2, 0.3, 0.5});
  otlab_measure_free(wm);
}

TEST_CASE("measure creation rejects bad input through status codes") {
  const std::vector<double> pts = {0.0, 1.0};
  otlab_measure* m = nullptr;

  CHECK(otlab_measure_create(nullptr, nullptr, 2, 1, &m) == OTLAB_ERR_INVALID);
  CHECK(otlab_measure_create(pts.data(), nullptr, 2, 1, nullptr) ==
        OTLAB_ERR_INVALID);

  const double bad_w[2] = {0.2, 0.2};
  CHECK(otlab_measure_create(pts.data(), bad_w, 2, 1, &m) == OTLAB_ERR_CONFIG);
  CHECK(m == nullptr);
  CHECK(std::strlen(otlab_last_error()) > 0);

  CHECK(otlab_measure_size(nullptr) == 0);
  CHECK(otlab_measure_dim(nullptr) == 0);
  CHECK(otlab_measure_copy_data(nullptr, nullptr, nullptr) ==
        OTLAB_ERR_INVALID);
}

TEST_CASE("measure files round-trip in both formats") {
  const std::string dir = temp_dir("measure_io");
  const std::vector<double> pts = {0.25, -1.5, 3.0, 0.125};
  const double weights[2] = {0.375, 0.625};
  otlab_measure* m = make_measure(pts, 2, 2, weights);

  for (const char* name : {"m.json", "m.csv"}) {
    const std::string path = dir + "/" + name;
    REQUIRE(otlab_measure_write(m, path.c_str()) == OTLAB_OK);
    otlab_measure* back = nullptr;
    REQUIRE(otlab_measure_read(path.c_str(), &back) == OTLAB_OK);
    CHECK(otlab_measure_size(back) == 2);
    CHECK(otlab_measure_dim(back) == 2);
    std::vector<double> got_pts(4), got_w(2);
    REQUIRE(otlab_measure_copy_data(back, got_pts.data(), got_w.data()) ==
            OTLAB_OK);
    CHECK(got_pts == pts);
    CHECK(got_w == std::vector<double>{0.375, 0.625});
    otlab_measure_free(back);
  }

  CHECK(otlab_measure_write(m, (dir + "/m.txt").c_str()) == OTLAB_ERR_CONFIG);
  otlab_measure* none = nullptr;
  CHECK(otlab_measure_read((dir + "/missing.json").c_str(), &none) ==
        OTLAB_ERR_CONFIG);
  CHECK(none == nullptr);
  otlab_measure_free(m);
}

TEST_CASE("solver produces the monotone matching and its cost") {
  otlab_measure* X = make_measure({0.0, 1.0, 2.0}, 3, 1);
  otlab_measure* Y = make_measure({5.0, 3.0, 4.0}, 3, 1);

  otlab_coupling* plan = nullptr;
  REQUIRE(otlab_solve(X, Y, 0, 0.0, &plan) == OTLAB_OK);
  REQUIRE(plan != nullptr);
  CHECK(otlab_coupling_cost(plan) == doctest::Approx(9.0).epsilon(1e-12));
  REQUIRE(otlab_coupling_entry_count(plan) == 3);

  int64_t rows[3], cols[3];
  double mass[3];
  REQUIRE(otlab_coupling_copy_entries(plan, rows, cols, mass) == OTLAB_OK);
  // Sorted matching 0->3, 1->4, 2->5 lands on target indices 1, 2, 0.
  CHECK(rows[0] == 0);
  CHECK(cols[0] == 1);
  CHECK(rows[1] == 1);
  CHECK(cols[1] == 2);
  CHECK(rows[2] == 2);
  CHECK(cols[2] == 0);
  for (double v : mass) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const std::string dir = temp_dir("coupling_io");
  const std::string path = dir + "/plan.json";
  REQUIRE(otlab_coupling_write(plan, path.c_str()) == OTLAB_OK);
  CHECK(slurp(path).find("\"entries\"") != std::string::npos);

  double dist = 0.0;
  REQUIRE(otlab_w2(X, Y, &dist) == OTLAB_OK);
  CHECK(dist == doctest::Approx(3.0).epsilon(1e-12));
  REQUIRE(otlab_w2(X, X, &dist) == OTLAB_OK);
  CHECK(dist == doctest::Approx(0.0));

  otlab_coupling_free(plan);
  otlab_measure_free(X);
  otlab_measure_free(Y);
}

TEST_CASE("solver failures map onto status codes") {
  otlab_measure* X = make_measure({0.0, 1.0}, 2, 1);
  otlab_measure* Y2 = make_measure({0.0, 0.0, 1.0, 1.0}, 2, 2);
  otlab_coupling* plan = nullptr;
  CHECK(otlab_solve(X, Y2, 0, 0.0, &plan) == OTLAB_ERR_CONFIG);
  CHECK(plan == nullptr);
  CHECK(otlab_solve(nullptr, Y2, 0, 0.0, &plan) == OTLAB_ERR_INVALID);
  otlab_measure_free(Y2);

  // Identity start, reversal optimum: finishing needs more than one pivot.
  std::vector<double> xp(8), yp(8);
  for (int i = 0; i < 4; ++i) {
    xp[2 * i] = i;
    xp[2 * i + 1] = 5.0 * i;
    yp[2 * i] = i;
    yp[2 * i + 1] = 5.0 * (3 - i);
  }
  otlab_measure* A = make_measure(xp, 4, 2);
  otlab_measure* B = make_measure(yp, 4, 2);
  CHECK(otlab_solve(A, B, 1, 0.0, &plan) == OTLAB_ERR_NUMERIC);
  CHECK(plan == nullptr);
  CHECK(std::strstr(otlab_last_error(), "pivot") != nullptr);
  otlab_measure_free(A);
  otlab_measure_free(B);
  otlab_measure_free(X);
}

TEST_CASE("nearest-neighbor map extends a solved plan") {
  otlab_measure* X = make_measure({0.0, 1.0, 2.0}, 3, 1);
  otlab_measure* Y = make_measure({5.0, 3.0, 4.0}, 3, 1);
  otlab_coupling* plan = nullptr;
  REQUIRE(otlab_solve(X, Y, 0, 0.0, &plan) == OTLAB_OK);

  otlab_map* map = nullptr;
  REQUIRE(otlab_fit_one_nn(plan, &map) == OTLAB_OK);
  REQUIRE(map != nullptr);
  CHECK(otlab_map_dim(map) == 1);

  const double queries[4] = {0.0, 1.0, 2.0, 0.4};
  double out[4];
  REQUIRE(otlab_map_apply(map, queries, 4, 1, out) == OTLAB_OK);
  CHECK(out[0] == doctest::Approx(3.0));
  CHECK(out[1] == doctest::Approx(4.0));
  CHECK(out[2] == doctest::Approx(5.0));
  CHECK(out[3] == doctest::Approx(3.0));

  CHECK(otlab_map_apply(map, queries, 2, 2, out) == OTLAB_ERR_CONFIG);
  CHECK(otlab_map_apply(nullptr, queries, 4, 1, out) == OTLAB_ERR_INVALID);

  SUBCASE("maps survive a file round trip") {
    const std::string dir = temp_dir("map_io");
    const std::string path = dir + "/map.json";
    REQUIRE(otlab_map_write(map, path.c_str()) == OTLAB_OK);
    otlab_map* back = nullptr;
    REQUIRE(otlab_map_read(path.c_str(), &back) == OTLAB_OK);
    double out2[4];
    REQUIRE(otlab_map_apply(back, queries, 4, 1, out2) == OTLAB_OK);
    for (int k = 0; k < 4; ++k) CHECK(out2[k] == out[k]);
    otlab_map_free(back);

    otlab_map* bad = nullptr;
    CHECK(otlab_map_read((dir + "/missing.json").c_str(), &bad) ==
          OTLAB_ERR_CONFIG);
  }

  SUBCASE("csv transformation maps one row per query") {
    const std::string dir = temp_dir("map_csv");
    const std::string in_csv = dir + "/in.csv";
    const std::string out_csv = dir + "/out.csv";
    std::ofstream(in_csv) << "0\n1\n\n2\n";
    REQUIRE(otlab_map_transform_csv(map, in_csv.c_str(), out_csv.c_str()) ==
            OTLAB_OK);
    CHECK(slurp(out_csv) == "3\n4\n5\n");

    std::ofstream(in_csv) << "1,2\n";
    CHECK(otlab_map_transform_csv(map, in_csv.c_str(), out_csv.c_str()) ==
          OTLAB_ERR_CONFIG);
  }

  otlab_map_free(map);
  otlab_coupling_free(plan);
  otlab_measure_free(X);
  otlab_measure_free(Y);
}

TEST_CASE("histogram map snaps queries to occupied cell centers") {
  otlab_measure* xs = make_measure({0.0, 2.0}, 2, 1);
  otlab_measure* ys = make_measure({0.0, 2.0}, 2, 1);
  otlab_map* map = nullptr;
  REQUIRE(otlab_fit_histogram(xs, ys, 2, &map) == OTLAB_OK);

  // Box [0,2] splits into [0,1) and [1,2]; both marginals put half their
  // mass at each cell center, so the plan is diagonal. Queries clamp into
  // the box first.
  const double queries[4] = {0.3, 1.7, 5.0, -3.0};
  double out[4];
  REQUIRE(otlab_map_apply(map, queries, 4, 1, out) == OTLAB_OK);
  CHECK(out[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(out[2] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(out[3] == doctest::Approx(0.5).epsilon(1e-12));

  otlab_map_free(map);
  otlab_map* bad = nullptr;
  CHECK(otlab_fit_histogram(xs, ys, 0, &bad) == OTLAB_ERR_CONFIG);
  CHECK(bad == nullptr);
  CHECK(otlab_fit_histogram(nullptr, ys, 2, &bad) == OTLAB_ERR_INVALID);
  otlab_measure_free(xs);
  otlab_measure_free(ys);
}

TEST_CASE("experiments run end to end through the C boundary") {
  const std::string dir = temp_dir("capi_exp");
  const std::string config =
      R"({"kind":"growth-suite","seed":3,"trials":5,"atoms":5,"d":2,"out_dir":")" +
      dir + R"("})";

  char* summary = nullptr;
  REQUIRE(otlab_run_experiment(config.c_str(), nullptr, 0, &summary) ==
          OTLAB_OK);
  REQUIRE(summary != nullptr);
  const std::string first(summary);
  CHECK(first.find("\"violations\": 0") != std::string::npos);
  CHECK(first.find("\"kind\": \"growth-suite\"") != std::string::npos);
  otlab_string_free(summary);

  // Identical configuration, identical bytes.
  summary = nullptr;
  REQUIRE(otlab_run_experiment(config.c_str(), nullptr, 0, &summary) ==
          OTLAB_OK);
  CHECK(first == summary);
  otlab_string_free(summary);

  // Overrides are applied on top of the config text.
  const char* overrides[] = {"trials=2"};
  summary = nullptr;
  REQUIRE(otlab_run_experiment(config.c_str(), overrides, 1, &summary) ==
          OTLAB_OK);
  CHECK(std::string(summary).find("\"trials\": 2") != std::string::npos);
  otlab_string_free(summary);
}

TEST_CASE("experiment failures surface as status codes") {
  char* summary = nullptr;
  CHECK(otlab_run_experiment("{not json", nullptr, 0, &summary) ==
        OTLAB_ERR_CONFIG);
  CHECK(summary == nullptr);
  CHECK(std::strlen(otlab_last_error()) > 0);

  CHECK(otlab_run_experiment(R"({"kind":"rate-e9","seed":1})", nullptr, 0,
                             &summary) == OTLAB_ERR_CONFIG);
  CHECK(otlab_run_experiment(nullptr, nullptr, 0, &summary) ==
        OTLAB_ERR_INVALID);
  const char* one_null[] = {nullptr};
  CHECK(otlab_run_experiment("{}", one_null, 1, &summary) ==
        OTLAB_ERR_CONFIG);
  CHECK(otlab_run_experiment("{}", nullptr, 1, &summary) == OTLAB_ERR_INVALID);
}

TEST_CASE("rate plots re-render from the per-trial CSV") {
  const std::string dir = temp_dir("capi_plot");
  const std::string config =
      R"({"kind":"rate-e3","seed":5,"d":1,"allow_low_dim":true,)"
      R"("sizes":[2,4],"trials":2,"n_eval":100,"out_dir":")" +
      dir + R"("})";
  char* summary = nullptr;
  REQUIRE(otlab_run_experiment(config.c_str(), nullptr, 0, &summary) ==
          OTLAB_OK);
  otlab_string_free(summary);

  const std::string csv = dir + "/rate-e3.csv";
  const std::string svg = dir + "/replot.svg";
  REQUIRE(otlab_render_rate_plot(csv.c_str(), svg.c_str()) == OTLAB_OK);
  const std::string body = slurp(svg);
  CHECK(body.rfind("<svg", 0) == 0);
  CHECK(body.find("rate-e3") != std::string::npos);

  CHECK(otlab_render_rate_plot((dir + "/none.csv").c_str(), svg.c_str()) ==
        OTLAB_ERR_CONFIG);
  CHECK(otlab_render_rate_plot(nullptr, svg.c_str()) == OTLAB_ERR_INVALID);
}
