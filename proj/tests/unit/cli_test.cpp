#include <gtest/gtest.h>

#include <sstream>

#include "cli.hpp"
#include "podo/image_io.hpp"
#include "podo/zip.hpp"
#include "support/workspace.hpp"

namespace podo {
namespace {

using testing::TempDir;
namespace fs = std::filesystem;

struct Outcome {
  int code;
  std::string out;
  std::string err;
  Json json() const { return Json::parse(out); }
};

class CliTest : public ::testing::Test {
 protected:
  TempDir dir;
  std::string store = (dir / "store").string();
  testing::FootParams params = testing::small_foot();
  RasterImage foot = testing::synthetic_foot(params);

  Outcome run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
  }

  Outcome ok(std::vector<std::string> args) {
    Outcome o = run(std::move(args));
    EXPECT_EQ(o.code, 0) << o.err;
    return o;
  }

  void SetUp() override {
    ok({"user", "add", "--store", store, "--id", "pat", "--role", "patient", "--secret", "pw",
        "--iterations", "1000"});
    ok({"user", "add", "--store", store, "--id", "doc", "--role", "clinician", "--secret", "pw",
        "--iterations", "1000"});
  }

  std::string ingest(const RasterImage& img, const std::string& time) {
    static int n = 0;
    const fs::path p = dir / ("in" + std::to_string(n++) + ".png");
    write_image(p, img);
    return ok({"ingest", "--store", store, "--patient", "pat", "--foot", "left", "--time", time,
               p.string()})
        .json()["scan_id"];
  }
};

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({"scans", "--store", store}).code, 2);  // missing --patient
  const Outcome missing = run({"scans", "--store", store, "--patient", "ghost"});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("NotFound"), std::string::npos) << missing.err;
  const Outcome dup = run({"user", "add", "--store", store, "--id", "pat", "--role", "patient",
                           "--secret", "x", "--iterations", "1000"});
  EXPECT_EQ(dup.code, 1);
  EXPECT_NE(dup.err.find("AlreadyExists"), std::string::npos);
  EXPECT_EQ(dup.out.find("pw"), std::string::npos);
}

TEST_F(CliTest, IngestRegisterTimelineExport) {
  const std::string base = ingest(foot, "2026-01-01T10:00:00Z");
  const SimilarityTransform warp = testing::centered_warp(1.04, 0.08, 6, -4, params.center);
  const std::string second =
      ingest(testing::warp_image(foot, warp, params.background), "2026-02-01T10:00:00Z");

  const Json t = ok({"register", "--store", store, "--scan", base}).json();
  EXPECT_EQ(t["scale"], 1.0);
  EXPECT_EQ(t["theta_rad"], 0.0);
  EXPECT_EQ(t["tx_px"], 0.0);
  EXPECT_EQ(t["converged"], true);

  const Json scans = ok({"scans", "--store", store, "--patient", "pat"}).json();
  ASSERT_EQ(scans["scans"].size(), 2u);
  EXPECT_EQ(scans["scans"][1]["scan_id"], second);
  EXPECT_EQ(ok({"analyze", "--store", store, "--scan", second}).json()["scan_id"], second);

  const std::string rid = ok({"roi", "add", "--store", store, "--patient", "pat", "--foot",
                              "left", "--rect", "220,110,30,20", "--label", "heel"})
                              .json()["id"];
  EXPECT_EQ(run({"roi", "add", "--store", store, "--patient", "pat", "--foot", "left", "--rect",
                 "1,2,3"})
                .code,
            1);
  ok({"roi", "approve", "--store", store, "--roi", rid});
  EXPECT_EQ(run({"roi", "approve", "--store", store, "--roi", rid}).code, 1);

  const fs::path crops = dir / "crops";
  const Json back = ok({"roi", "timeline", "--store", store, "--roi", rid, "--direction",
                        "backward", "--crops-dir", crops.string()})
                        .json();
  ASSERT_EQ(back["entries"].size(), 2u);
  EXPECT_EQ(back["entries"][0]["scan_id"], second);
  EXPECT_EQ(back["entries"][1]["scan_id"], base);
  EXPECT_EQ(std::distance(fs::directory_iterator(crops), fs::directory_iterator{}), 2);

  ok({"roi", "note", "--store", store, "--roi", rid, "--text", "smaller", "--as", "pat"});
  EXPECT_EQ(run({"roi", "note", "--store", store, "--roi", rid, "--text", "x", "--as", "doc"}).code,
            1);
  ok({"user", "grant", "--store", store, "--patient", "pat", "--clinician", "doc"});
  ok({"roi", "note", "--store", store, "--roi", rid, "--text", "agreed", "--as", "doc"});
  const Json notes = ok({"roi", "notes", "--store", store, "--roi", rid}).json();
  ASSERT_EQ(notes["notes"].size(), 2u);
  EXPECT_EQ(notes["notes"][1]["author"], "doc");

  const fs::path a = dir / "a.zip", b = dir / "b.zip";
  ok({"export", "--store", store, "--roi", rid, "--out", a.string(), "--recipient", "doc"});
  ok({"export", "--store", store, "--roi", rid, "--out", b.string(), "--recipient", "doc"});
  const Bytes za = read_file(a);
  EXPECT_EQ(za, read_file(b));
  EXPECT_EQ(read_zip(za).size(), 4u);  // manifest, two crops, notes
  EXPECT_EQ(ok({"register", "--store", store, "--scan", second}).out,
            ok({"register", "--store", store, "--scan", second}).out);

  ok({"user", "revoke", "--store", store, "--patient", "pat", "--clinician", "doc"});
  EXPECT_EQ(run({"export", "--store", store, "--roi", rid, "--out", a.string(), "--recipient",
                 "doc"})
                .code,
            1);
}

}  // namespace
}  // namespace podo
