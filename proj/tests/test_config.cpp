#include <fstream>
#include <set>

#include "doctest.h"
#include "support.hpp"

using namespace mvd;

namespace {

std::string parse_error(const std::string& text) {
  try {
    parse_config(text, "exp.cfg");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("defaults") {
  const Config c;
  CHECK(c.omega == 2.0);
  CHECK(c.threshold == 0.98);
  CHECK(c.schedule.steps == 100);
  CHECK(c.rig.num_views == 16);
  CHECK(c.rig.elevation_deg == 30.0);
  CHECK(c.train.views_per_sample == 5);
  CHECK(c.train.cfg_dropout == 0.1);
  CHECK(c.depth.form == SigmaForm::Reciprocal);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("parse, comments and overrides") {
  const Config c = parse_config(
      "# experiment\n"
      "seed = 42\n"
      "  schedule.steps=10   # short\n"
      "schedule.reference_steps = 10\n"
      "depth.sigma_form = verbatim\n"
      "rig.image_size = 16\n"
      "net.use_frustum = false\n"
      "\n"
      "agg.layers = 2\n"
      "train.lr = 0.001\n");
  CHECK(c.seed == 42);
  CHECK(c.schedule.steps == 10);
  CHECK(c.depth.form == SigmaForm::Verbatim);
  CHECK(c.rig.image_size == 16);
  CHECK(c.net.image_size == 16);
  CHECK(!c.net.use_frustum);
  CHECK(c.net.aggregator.layers == 2);
  CHECK(c.train.lr == 0.001);
  CHECK_NOTHROW(c.validate());
  CHECK(c.get("train.lr") == "0.001");
  CHECK(c.get("net.use_frustum") == "false");
}

TEST_CASE("errors name the line and key") {
  CHECK(parse_error("seed = 1\nnot.a.key = 3\n").find("exp.cfg:2") != std::string::npos);
  CHECK(parse_error("seed = 1\nnot.a.key = 3\n").find("not.a.key") != std::string::npos);
  CHECK(parse_error("schedule.steps = ten\n").find("schedule.steps") != std::string::npos);
  CHECK(parse_error("net.use_frustum = maybe\n").find("exp.cfg:1") != std::string::npos);
  CHECK(parse_error("just words\n").find("key = value") != std::string::npos);
  CHECK(parse_error("depth.sigma_form = other\n") != "");
  CHECK_THROWS_AS(load_config(test::scratch_dir("config") / "missing.cfg"), Error);
}

TEST_CASE("validation") {
  Config c;
  c.schedule.steps = 10;
  CHECK_THROWS_AS(c.validate(), Error);
  c.schedule.reference_steps = 10;
  CHECK_NOTHROW(c.validate());
  c.rig.near = 4.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = Config{};
  c.train.views_per_sample = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = Config{};
  c.threshold = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("canonical text roundtrips every key") {
  Config c;
  c.seed = 7;
  c.set("train.lr", "0.00025");
  c.set("depth.k", "0.75");
  c.set("agg.dim", "16");
  const std::string text = c.to_text();
  const Config back = parse_config(text);
  CHECK(back.to_text() == text);
  std::set<std::string> seen;
  for (const ConfigKey& k : config_keys()) {
    CHECK(seen.insert(k.name).second);
    CHECK(text.find(k.name + " = " + c.get(k.name) + "\n") != std::string::npos);
    CHECK(back.get(k.name) == c.get(k.name));
    CHECK(!k.help.empty());
  }
  CHECK(seen.size() >= 30);

  const auto dir = test::scratch_dir("config_file");
  {
    std::ofstream out(dir / "c.cfg");
    out << text;
  }
  CHECK(load_config(dir / "c.cfg").to_text() == text);
}

}
