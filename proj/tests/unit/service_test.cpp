#include <gtest/gtest.h>

#include <cmath>

#include "podo/error.hpp"
#include "podo/image_io.hpp"
#include "podo/service.hpp"
#include "podo/transform.hpp"
#include "support/workspace.hpp"

namespace podo {
namespace {

using testing::FakeClock;
using testing::TempDir;

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::Io;
}

class ServiceTest : public ::testing::Test {
 protected:
  TempDir dir;
  FakeClock clock;
  Store store{dir.path(), testing::fast_store_options(clock)};
  Service service{store, AnalyzerRegistry::with_builtins()};
  Actor op = Actor::local_operator();
  Actor pat;
  Actor doc;
  testing::FootParams params = testing::small_foot();
  RasterImage base_img = testing::synthetic_foot(params);
  SimilarityTransform warp = testing::centered_warp(1.03, 0.08, 9.0, -6.0, params.center);

  void SetUp() override {
    pat = Actor::from_user(service.add_user(op, "pat", "Pat", Role::patient, "pw"));
    doc = Actor::from_user(service.add_user(op, "doc", "Doc", Role::clinician, "pw"));
  }

  RasterImage warped() const { return testing::warp_image(base_img, warp, params.background); }
};

TEST_F(ServiceTest, FirstScanIsBaselineSecondRegisters) {
  const ScanRecord b = service.ingest(pat, "pat", Foot::left, base_img, 1000);
  EXPECT_TRUE(b.is_baseline);
  EXPECT_EQ(b.baseline_id, b.scan_id);
  EXPECT_EQ(b.registration.transform, SimilarityTransform::identity());

  clock.advance(60);
  const ScanRecord s = service.ingest(pat, "pat", Foot::left, warped(), 2000);
  EXPECT_FALSE(s.is_baseline);
  EXPECT_EQ(s.baseline_id, b.scan_id);
  ASSERT_TRUE(s.registration.converged);
  // Stored transform maps scan -> canonical, the inverse of the warp.
  const SimilarityTransform truth = invert(warp);
  EXPECT_NEAR(s.registration.transform.scale, truth.scale, 0.01 * truth.scale);
  EXPECT_NEAR(s.registration.transform.theta, truth.theta, 0.5 * M_PI / 180);
  EXPECT_NEAR(s.registration.transform.tx, truth.tx, 1.5);
  EXPECT_NEAR(s.registration.transform.ty, truth.ty, 1.5);

  // A right-foot scan starts its own baseline.
  const ScanRecord r = service.ingest(pat, "pat", Foot::right, warped(), 3000);
  EXPECT_TRUE(r.is_baseline);

  const Json a = service.analysis(pat, s.scan_id);
  EXPECT_EQ(a["scan_id"], s.scan_id);
  EXPECT_EQ(a["analyzers"].size(), 2u);
}

TEST_F(ServiceTest, ReregisterIsBitIdenticalAndIdentityForBaseline) {
  const ScanRecord b = service.ingest(pat, "pat", Foot::left, base_img, 1000);
  const ScanRecord s = service.ingest(pat, "pat", Foot::left, warped(), 2000);
  const RegistrationResult rb = service.reregister(pat, b.scan_id);
  EXPECT_EQ(rb.transform, SimilarityTransform::identity());
  EXPECT_TRUE(rb.converged);
  EXPECT_EQ(transform_json(rb).dump(), service.transform(pat, b.scan_id).dump());
  EXPECT_EQ(transform_json(service.reregister(pat, s.scan_id)).dump(),
            service.transform(pat, s.scan_id).dump());
}

TEST_F(ServiceTest, StorageOnlySkipsAnalyzers) {
  ServiceOptions o;
  o.mode = ProcessingMode::storage_only;
  Service quiet(store, AnalyzerRegistry::with_builtins(), o);
  const ScanRecord b = quiet.ingest(pat, "pat", Foot::left, base_img, 1000);
  EXPECT_TRUE(quiet.analysis(pat, b.scan_id)["analyzers"].empty());
  EXPECT_EQ(quiet.reanalyze(pat, b.scan_id).analyzers.size(), 2u);
}

TEST_F(ServiceTest, RejectedRegistrationIsKeptButFlagged) {
  service.ingest(pat, "pat", Foot::left, base_img, 1000);
  testing::FootParams tiny = params;
  tiny.length = 90.0;  // needs a scale far outside [0.5, 2]
  EXPECT_EQ(code_of([&] { service.ingest(pat, "pat", Foot::left, testing::synthetic_foot(tiny), 2000); }),
            Errc::RegistrationRejected);
  const auto scans = service.list_scans(pat, "pat", Foot::left);
  ASSERT_EQ(scans.size(), 2u);
  EXPECT_FALSE(scans[1].registration.converged);
  EXPECT_EQ(code_of([&] { service.reanalyze(pat, scans[1].scan_id); }), Errc::UnregisteredScan);

  const Roi roi = service.create_roi(pat, "pat", Foot::left, {200, 110, 30, 20}, "");
  const Timeline tl = service.timeline(pat, roi.id, {});
  EXPECT_EQ(tl.entries.size(), 1u);
  EXPECT_EQ(tl.skipped, 1);
}

TEST_F(ServiceTest, InputErrors) {
  EXPECT_EQ(code_of([&] {
              service.ingest(pat, "pat", Foot::left, testing::solid_image(64, 64, {90, 90, 90}), 1);
            }),
            Errc::EmptyForeground);
  EXPECT_EQ(code_of([&] { service.ingest(op, "nobody", Foot::left, base_img, 1); }),
            Errc::NotFound);
  service.ingest(pat, "pat", Foot::left, base_img, 1000);
  testing::FootParams other_dpi = params;
  other_dpi.dpi = 300;
  EXPECT_EQ(code_of([&] {
              service.ingest(pat, "pat", Foot::left, testing::synthetic_foot(other_dpi), 2000);
            }),
            Errc::InvalidArgument);
}

TEST_F(ServiceTest, RoiRules) {
  EXPECT_EQ(code_of([&] { service.create_roi(pat, "pat", Foot::left, {1, 1, 5, 5}, ""); }),
            Errc::NotFound);  // no baseline yet
  service.ingest(pat, "pat", Foot::left, base_img, 1000);
  EXPECT_EQ(code_of([&] { service.create_roi(pat, "pat", Foot::left, {1, 1, 5, 5}, ""); }),
            Errc::OutsideFoot);
  EXPECT_EQ(code_of([&] { service.create_roi(pat, "pat", Foot::left, {200, 110, 0, 5}, ""); }),
            Errc::InvalidArgument);
  EXPECT_EQ(code_of([&] {
              service.create_roi(pat, "pat", Foot::left, {200, 110, 5, 5}, std::string(201, 'x'));
            }),
            Errc::InvalidArgument);

  const Roi r = service.create_roi(pat, "pat", Foot::left, {200, 110, 30, 20}, "heel");
  EXPECT_EQ(r.status, RoiStatus::proposed);
  EXPECT_EQ(service.approve_roi(pat, r.id).status, RoiStatus::approved);
  EXPECT_EQ(code_of([&] { service.approve_roi(pat, r.id); }), Errc::IllegalTransition);

  // Clinicians annotate and approve with a grant, never create or delete.
  EXPECT_EQ(code_of([&] { service.list_rois(doc, "pat"); }), Errc::Unauthorized);
  service.grant(pat, "pat", "doc");
  const Roi r2 = service.create_roi(pat, "pat", Foot::left, {220, 110, 10, 10}, "");
  EXPECT_EQ(service.approve_roi(doc, r2.id).status, RoiStatus::approved);
  EXPECT_EQ(code_of([&] { service.delete_roi(doc, r2.id); }), Errc::Unauthorized);
  EXPECT_EQ(code_of([&] { service.create_roi(doc, "pat", Foot::left, {220, 110, 10, 10}, ""); }),
            Errc::Unauthorized);

  EXPECT_EQ(service.delete_roi(pat, r.id).status, RoiStatus::deleted);
  EXPECT_EQ(code_of([&] { service.add_note(pat, r.id, "late"); }), Errc::IllegalTransition);
  EXPECT_EQ(service.list_rois(doc, "pat").size(), 2u);
}

TEST_F(ServiceTest, NotesAreOrderedAndBounded) {
  service.ingest(pat, "pat", Foot::left, base_img, 1000);
  service.grant(pat, "pat", "doc");
  const Roi r = service.create_roi(pat, "pat", Foot::left, {200, 110, 30, 20}, "");
  service.add_note(pat, r.id, "one");
  clock.now->store(clock.now->load() - 500);  // clock stepping backwards
  service.add_note(doc, r.id, "two");
  const auto notes = service.notes(pat, r.id);
  ASSERT_EQ(notes.size(), 2u);
  EXPECT_EQ(notes[1].author, "doc");
  EXPECT_GE(notes[1].timestamp, notes[0].timestamp);
  EXPECT_EQ(code_of([&] { service.add_note(pat, r.id, ""); }), Errc::InvalidArgument);
  EXPECT_EQ(code_of([&] { service.add_note(pat, r.id, std::string(4001, 'n')); }),
            Errc::InvalidArgument);
  EXPECT_NO_THROW(service.add_note(pat, r.id, std::string(4000, 'n')));
}

TEST_F(ServiceTest, MeasureUsesScanDpi) {
  const ScanRecord b = service.ingest(pat, "pat", Foot::left, base_img, 1000);
  EXPECT_DOUBLE_EQ(service.measure(pat, b.scan_id, {0, 0}, {150, 0}), 25.4);
  EXPECT_DOUBLE_EQ(service.measure(pat, b.scan_id, {3, 4}, {3, 4}), 0.0);
  EXPECT_EQ(code_of([&] { service.measure(doc, b.scan_id, {0, 0}, {1, 1}); }), Errc::Unauthorized);
}

TEST_F(ServiceTest, ImagesDecodeAtExpectedSizes) {
  Service small(store, AnalyzerRegistry::with_builtins(), {.thumbnail_side = 128});
  const ScanRecord b = small.ingest(pat, "pat", Foot::left, base_img, 1000);
  const RasterImage full = decode_png(small.scan_image(pat, b.scan_id, ImageSize::full));
  EXPECT_EQ(full, base_img);
  const RasterImage thumb = decode_png(small.scan_image(pat, b.scan_id, ImageSize::thumb));
  EXPECT_EQ(std::max(thumb.width(), thumb.height()), 128);
  const RasterImage canon = decode_png(small.scan_image(pat, b.scan_id, ImageSize::canonical));
  EXPECT_EQ(canon.width(), base_img.width());
  EXPECT_THROW(parse_image_size("huge"), Error);
}

TEST_F(ServiceTest, ExportRulesAndAudit) {
  service.ingest(pat, "pat", Foot::left, base_img, 1000);
  service.ingest(pat, "pat", Foot::left, warped(), 2000);
  const Roi r = service.create_roi(pat, "pat", Foot::left, {200, 110, 30, 20}, "");

  EXPECT_EQ(code_of([&] { service.export_roi(pat, r.id, {.recipient = "doc"}); }),
            Errc::InvalidArgument);  // no grant yet
  service.grant(pat, "pat", "doc");
  const ExportResult e1 = service.export_roi(pat, r.id, {.recipient = "doc"});
  clock.advance(3600);
  const ExportResult e2 = service.export_roi(pat, r.id, {.recipient = "doc"});
  EXPECT_EQ(e1.export_id, e2.export_id);
  EXPECT_EQ(service.read_export(doc, e1.export_id).size(), e1.size);

  const ExportResult e3 = service.export_roi(pat, r.id, {.recipient = "doc", .message = "see"});
  EXPECT_NE(e3.export_id, e1.export_id);
  EXPECT_EQ(service.notes(pat, r.id).back().text, "see");

  EXPECT_EQ(code_of([&] { service.export_roi(pat, r.id, {.recipient = "doc", .from = 5000}); }),
            Errc::EmptyRange);

  int exports = 0;
  for (const Json& ev : store.audit_log()) exports += ev["event"] == "export";
  EXPECT_EQ(exports, 3);

  service.revoke(pat, "pat", "doc");
  EXPECT_EQ(code_of([&] { service.read_export(doc, e1.export_id); }), Errc::Unauthorized);
  EXPECT_EQ(code_of([&] { service.export_roi(doc, r.id, {.recipient = "doc"}); }),
            Errc::Unauthorized);
}

TEST_F(ServiceTest, GrantsAndPatientListing) {
  EXPECT_TRUE(service.patients(doc).empty());
  service.grant(pat, "pat", "doc");
  EXPECT_EQ(service.patients(doc), std::vector<std::string>{"pat"});
  EXPECT_EQ(service.patients(pat), std::vector<std::string>{"pat"});
  EXPECT_EQ(service.grants(doc, "pat").size(), 1u);
  EXPECT_EQ(code_of([&] { service.grant(doc, "pat", "doc"); }), Errc::Unauthorized);
  EXPECT_EQ(code_of([&] { service.add_user(pat, "x", "X", Role::patient, "pw"); }),
            Errc::Unauthorized);
  service.revoke(pat, "pat", "doc");
  EXPECT_TRUE(service.patients(doc).empty());
}

}  // namespace
}  // namespace podo
