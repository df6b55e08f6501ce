#include <doctest.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "ndlab/checkpoint.hpp"
#include "ndlab/csvio.hpp"
#include "ndlab/datagen.hpp"
#include "ndlab/errors.hpp"
#include "ndlab/rng.hpp"
#include "ndlab/svg_plot.hpp"

using namespace ndlab;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("format_double round-trips exact bits") {
  const double cases[] = {0.0,
                          -0.0,
                          1.0,
                          0.1,
                          1.0 / 3.0,
                          -12345.6789,
                          1e-300,
                          -1e300,
                          5e-324,  // smallest denormal
                          std::numeric_limits<double>::max(),
                          0.30000000000000004,
                          2.2250738585072014e-308};
  for (double v : cases) {
    const std::string s = format_double(v);
    const double back = parse_double_strict(s, "round-trip");
    CHECK(std::memcmp(&back, &v, sizeof v) == 0);
  }
}

TEST_CASE("csv split and join are inverses") {
  const std::vector<std::string> fields{"a", "", "1.5", "x y", "z"};
  const std::string line = join_csv(fields);
  CHECK(line == "a,,1.5,x y,z");
  CHECK(split_csv_line(line) == fields);
  CHECK(split_csv_line("") == std::vector<std::string>{""});
  CHECK(split_csv_line(",") == std::vector<std::string>({"", ""}));
}

TEST_CASE("strict parsers reject junk") {
  CHECK(parse_double_strict("2.5e-3", "f") == 0.0025);
  CHECK(parse_long_strict("-42", "i") == -42);
  CHECK_THROWS_AS(parse_double_strict("", "f"), DataError);
  CHECK_THROWS_AS(parse_double_strict("1.5x", "f"), DataError);
  CHECK_THROWS_AS(parse_long_strict("3.5", "i"), DataError);
  CHECK_THROWS_AS(parse_long_strict("abc", "i"), DataError);
}

TEST_CASE("csv table write-read-write is byte stable") {
  CsvTable t;
  t.header = {"name", "x", "y"};
  t.rows = {{"a", format_double(0.1), format_double(1.0 / 3.0)},
            {"b", format_double(-2.0), format_double(5e-324)}};
  const std::string p1 = tmp_path("ndlab_t1.csv");
  const std::string p2 = tmp_path("ndlab_t2.csv");
  write_csv(p1, t);
  CsvTable back = read_csv(p1);
  CHECK(back.header == t.header);
  CHECK(back.rows == t.rows);
  write_csv(p2, back);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("csv read errors are typed") {
  CHECK_THROWS_AS(read_csv(tmp_path("ndlab_missing_file.csv")), IoError);

  const std::string ragged = tmp_path("ndlab_ragged.csv");
  {
    std::ofstream out(ragged);
    out << "a,b\n1,2\n3\n";
  }
  CHECK_THROWS_AS(read_csv(ragged), DataError);

  const std::string empty = tmp_path("ndlab_empty.csv");
  { std::ofstream out(empty); }
  CHECK_THROWS_AS(read_csv(empty), DataError);
}

TEST_CASE("checkpoint save-load-save produces identical bytes") {
  Rng rng(31);
  ParamStore store;
  Mat w(3, 4);
  for (auto& v : w.data) v = rng.next_normal();
  store.add("layer.W", std::move(w));
  store.add("layer.stats", Mat(1, 4, 0.25), /*trainable=*/false);
  Mat b(1, 4);
  for (auto& v : b.data) v = rng.next_normal();
  store.add("layer.b", std::move(b));

  const std::string p1 = tmp_path("ndlab_ck1.bin");
  const std::string p2 = tmp_path("ndlab_ck2.bin");
  save_checkpoint(p1, "{\"kind\":\"test\"}", store);
  Checkpoint back = load_checkpoint(p1);
  CHECK(back.header == "{\"kind\":\"test\"}");
  REQUIRE(back.params.size() == store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& a = store.entries()[i];
    const auto& b2 = back.params.entries()[i];
    CHECK(a.name == b2.name);
    CHECK(a.trainable == b2.trainable);
    CHECK(a.value == b2.value);
  }
  CHECK(back.params.value_hash() == store.value_hash());
  save_checkpoint(p2, back.header, back.params);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("checkpoint rejects corrupt files") {
  const std::string bad = tmp_path("ndlab_bad.bin");
  {
    std::ofstream out(bad, std::ios::binary);
    out << "NOTACKPT";
  }
  CHECK_THROWS_AS(load_checkpoint(bad), IoError);
  CHECK_THROWS_AS(load_checkpoint(tmp_path("ndlab_missing.bin")), IoError);

  // Truncation after the magic.
  ParamStore store;
  store.add("w", Mat(2, 2, 1.0));
  const std::string full = tmp_path("ndlab_full.bin");
  save_checkpoint(full, "h", store);
  const std::string bytes = slurp(full);
  const std::string trunc = tmp_path("ndlab_trunc.bin");
  {
    std::ofstream out(trunc, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(trunc), IoError);
}

TEST_CASE("svg scatter output is a pure function of the points") {
  LabeledData pts;
  pts.X = Mat(6, 2);
  Rng rng(4);
  for (auto& v : pts.X.data) v = rng.next_normal();
  pts.y = {0, 0, 1, 1, 2, 2};
  pts.C = 3;

  const std::string p1 = tmp_path("ndlab_s1.svg");
  const std::string p2 = tmp_path("ndlab_s2.svg");
  plot_scatter_svg(pts, p1);
  plot_scatter_svg(pts, p2);
  const std::string svg = slurp(p1);
  CHECK(svg == slurp(p2));
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("<circle") != std::string::npos);
  CHECK(svg.rfind("</svg>") != std::string::npos);
}
