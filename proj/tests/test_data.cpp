#include <doctest.h>

#include <map>
#include <numeric>

#include "support.hpp"
#include "tsmt/dataset.hpp"
#include "tsmt/io.hpp"

using namespace tsmt;
using namespace tsmt::data;

namespace {

// Every radar value encodes its own (t, r, c) and every satellite value its
// (k, ch, i, j), so window positions can be checked exactly.
double radar_code(Index t, Index r, Index c) { return double(t * 10000 + r * 100 + c); }
double sat_code(Index k, Index ch, Index i, Index j) { return double(((k * 13 + ch) * 50 + i) * 50 + j); }

GridSequence coded_sequence(Index frames, Index size, double radar_dt = 6.0, double sat_dt = 10.0) {
  GridSequence s;
  s.radar = Tensor({frames, size, size});
  for (Index t = 0; t < frames; ++t) {
    s.radar_times.push_back(t * radar_dt);
    for (Index r = 0; r < size; ++r)
      for (Index c = 0; c < size; ++c) s.radar[(t * size + r) * size + c] = radar_code(t, r, c);
  }
  const Index sat_frames = Index(std::floor((frames - 1) * radar_dt / sat_dt)) + 1, half = size / 2;
  s.satellite = Tensor({sat_frames, kSatelliteChannels, half, half});
  for (Index k = 0; k < sat_frames; ++k) {
    s.satellite_times.push_back(k * sat_dt);
    for (Index ch = 0; ch < kSatelliteChannels; ++ch)
      for (Index i = 0; i < half; ++i)
        for (Index j = 0; j < half; ++j) s.satellite[((k * 13 + ch) * half + i) * half + j] = sat_code(k, ch, i, j);
  }
  return s;
}

GridSequence flat_sequence(Index frames, double dbz) {
  GridSequence s;
  s.radar = Tensor({frames, 4, 4}, dbz);
  for (Index t = 0; t < frames; ++t) s.radar_times.push_back(6.0 * t);
  s.satellite = Tensor({1, kSatelliteChannels, 2, 2});
  s.satellite_times = {0.0};
  return s;
}

SyntheticStormConfig small_synth() {
  SyntheticStormConfig c;
  c.sequences = 4;
  c.radar_height = 72;
  c.radar_width = 72;
  c.radar_frames = 11;
  c.cells_per_sequence = 5;
  c.amplitude_min = 30;
  c.sigma_min = 10;
  c.sigma_max = 20;
  c.seed = 21;
  return c;
}

}  // namespace

TEST_CASE("labels look exactly 30 minutes ahead") {
  GridSequence s = flat_sequence(12, 10.0);
  auto set = [&](Index t, double v) { s.radar[(t * 4 + 1) * 4 + 2] = v; };
  // Frames t+1..t+5 (6..30 min) are inside the horizon; t+6 is not.
  set(6, 40.0);
  CHECK(label_pixel(s, 0, 1, 2) == 0);
  CHECK(label_pixel(s, 1, 1, 2) == 1);
  CHECK(label_pixel(s, 5, 1, 2) == 1);
  CHECK(label_pixel(s, 6, 1, 2) == 0);  // the frame itself does not count
  CHECK(label_pixel(s, 0, 0, 0) == 0);
  set(7, 35.0);  // the threshold is inclusive
  CHECK(label_pixel(s, 6, 1, 2) == 1);
  CHECK_FALSE(label_pixel(s, 7, 1, 2).has_value());  // ends before t + 30 min
  CHECK(label_pixel(s, 6, 1, 2).has_value());

  for (Index t = 2; t <= 6; ++t) set(t, 50.0);
  CHECK(label_pixel(s, 1, 1, 2, LabelRule::Sustained) == 1);
  CHECK(label_pixel(s, 2, 1, 2, LabelRule::Sustained) == 1);
  CHECK(label_pixel(s, 3, 1, 2, LabelRule::Sustained) == 0);
  CHECK(label_pixel(s, 3, 1, 2, LabelRule::AnyFrame) == 1);
  CHECK(parse_label_rule("sustained") == LabelRule::Sustained);
  CHECK_THROWS_AS(parse_label_rule("maybe"), ConfigError);
}

TEST_CASE("satellite pairing takes the latest frame not after the radar time") {
  GridSequence s = coded_sequence(11, 8);
  // Radar every 6 min, satellite every 10 min.
  const std::map<Index, Index> want = {{0, 0}, {1, 0}, {2, 1}, {3, 1}, {4, 2}, {5, 3}, {6, 3}, {7, 4}, {8, 4}, {9, 5}};
  for (const auto& [t, k] : want) CHECK(satellite_frame_for(s, t) == k);
}

TEST_CASE("patches cover the documented windows") {
  GridSequence s = coded_sequence(11, 64);
  s.validate();
  const Index t = 9, r = 30, c = 33;
  auto p = extract_patches(s, t, r, c);
  REQUIRE(p);
  REQUIRE(p->radar.size() == kRadarPatchSize);
  REQUIRE(p->satellite.size() == kSatellitePatchSize);
  // Radar rows r-27 .. r+26 of frames t-4 .. t; the pixel lands at index 27.
  CHECK(p->radar[0] == radar_code(5, 3, 6));
  CHECK(p->radar[kRadarPatchSize - 1] == radar_code(9, 56, 59));
  CHECK(p->radar[(4 * 54 + 27) * 54 + 27] == radar_code(t, r, c));
  // Satellite frames ending at k = 5 (t = 9 is 54 min; 50 min is the latest).
  const Index s_r0 = (r - 27) / 2, s_c0 = (c - 27) / 2;
  CHECK(p->satellite[0] == sat_code(3, 0, s_r0, s_c0));
  CHECK(p->satellite[kSatellitePatchSize - 1] == sat_code(5, 12, s_r0 + 26, s_c0 + 26));
  // The radar pixel's block maps to the satellite pixel that contains it.
  const Index si = r / 2 - s_r0, sj = c / 2 - s_c0;
  CHECK(p->satellite[((0 * 3 + 2) * 27 + si) * 27 + sj] == sat_code(5, 0, r / 2, c / 2));

  CHECK_FALSE(extract_patches(s, 3, r, c));   // not enough radar history
  CHECK_FALSE(extract_patches(s, t, 26, c));  // window leaves the grid
  CHECK_FALSE(extract_patches(s, t, r, 38));
  CHECK(extract_patches(s, t, 27, 37));
}

TEST_CASE("regression label is the 48x48 window at t + 30 min") {
  GridSequence s = coded_sequence(11, 64);
  auto l = regression_label(s, 4, 30, 31);
  REQUIRE(l);
  CHECK((*l)[0] == radar_code(9, 6, 7));
  CHECK((*l)[kRegressionCentre * 48 + kRegressionCentre] == radar_code(9, 30, 31));
  CHECK((*l)[kRegressionSize - 1] == radar_code(9, 53, 54));
  CHECK_FALSE(regression_label(s, 6, 30, 31));
}

TEST_CASE("normalization maps the range onto [-1, 1] and clamps") {
  CHECK(normalize(0.0, 0.0, 80.0) == -1.0);
  CHECK(normalize(80.0, 0.0, 80.0) == 1.0);
  CHECK(normalize(20.0, 0.0, 80.0) == doctest::Approx(-0.5));
  CHECK(normalize(200.0, 0.0, 80.0) == 1.0);
  CHECK(normalize(-3.0, 0.0, 80.0) == -1.0);
  CHECK(denormalize(normalize(31.7, -4.0, 60.0), -4.0, 60.0) == doctest::Approx(31.7).epsilon(1e-14));
  CHECK_THROWS_AS(normalize(1.0, 2.0, 2.0), ConfigError);
}

TEST_CASE("satellite channels must arrive complete and in canonical order") {
  std::vector<NamedChannel> frame;
  for (const std::string& n : satellite_channel_names()) frame.push_back({n, RowMatrix<double>::Constant(2, 3, 1.0)});
  CHECK(stack_satellite_channels(frame).shape() == Shape{13, 2, 3});
  std::swap(frame[1], frame[2]);
  CHECK_THROWS_AS(stack_satellite_channels(frame), ConfigError);
  std::swap(frame[1], frame[2]);
  frame.pop_back();
  CHECK_THROWS_AS(stack_satellite_channels(frame), ConfigError);
  CHECK(is_albedo_channel(0));
  CHECK_FALSE(is_albedo_channel(3));
}

TEST_CASE("rebalance hits the target fraction") {
  std::vector<int> labels(100, 0);
  for (int i = 0; i < 20; ++i) labels[i * 5] = 1;
  for (BalanceMode mode : {BalanceMode::Oversample, BalanceMode::Undersample}) {
    const auto copies = rebalance(labels, 0.5, mode, 3);
    long pos = 0, all = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      CHECK(copies[i] >= 0);
      pos += copies[i] * labels[i];
      all += copies[i];
    }
    CHECK(double(pos) / double(all) == doctest::Approx(0.5));
    CHECK(rebalance(labels, 0.5, mode, 3) == copies);
  }
  const auto over = rebalance(labels, 0.5, BalanceMode::Oversample, 3);
  for (std::size_t i = 0; i < labels.size(); ++i) CHECK(over[i] == (labels[i] ? 4 : 1));
  CHECK_THROWS_AS(rebalance(std::vector<int>(5, 0), 0.5, BalanceMode::Oversample, 1), ConfigError);
  CHECK_THROWS_AS(rebalance(labels, 1.0, BalanceMode::Oversample, 1), ConfigError);
}

TEST_CASE("synthetic sequences are deterministic and registered") {
  const SyntheticStormConfig cfg = small_synth();
  GridSequence a = synth_sequence(cfg, 1), b = synth_sequence(cfg, 1), c = synth_sequence(cfg, 2);
  a.validate();
  CHECK(a.radar.data() == b.radar.data());
  CHECK(a.satellite.data() == b.satellite.data());
  CHECK(a.radar.data() != c.radar.data());
  CHECK(a.radar.data().minCoeff() >= kRadarMinDbz);
  CHECK(a.radar.data().maxCoeff() <= kRadarMaxDbz);
  CHECK(a.satellite_height() * 2 == a.radar_height());

  // Colder cloud tops over stronger echoes: IR brightness temperature must
  // anticorrelate with the radar block it covers.
  const Index t = 5, k = *satellite_frame_for(a, t), ch = 8;
  std::vector<double> ir, dbz;
  for (Index i = 0; i < a.satellite_height(); ++i)
    for (Index j = 0; j < a.satellite_width(); ++j) {
      ir.push_back(a.satellite_at(k, ch, i, j));
      dbz.push_back(a.radar_at(t, 2 * i, 2 * j));
    }
  const double mi = std::accumulate(ir.begin(), ir.end(), 0.0) / double(ir.size());
  const double md = std::accumulate(dbz.begin(), dbz.end(), 0.0) / double(dbz.size());
  double cov = 0;
  for (std::size_t i = 0; i < ir.size(); ++i) cov += (ir[i] - mi) * (dbz[i] - md);
  CHECK(cov < 0);

  test::TempDir dir("seq");
  save_sequence(dir.path() / "s", a);
  GridSequence back = load_sequence(dir.path() / "s");
  CHECK(back.radar_times == a.radar_times);
  CHECK(back.satellite_times == a.satellite_times);
  CHECK((back.radar.data() - a.radar.data()).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("dataset build is deterministic and folds are consistent") {
  const auto seqs = synth_generate(small_synth());
  test::TempDir d1("ds1"), d2("ds2");
  BuildOptions opt;
  opt.stride = 8;
  DatasetManifest m = build_dataset(seqs, opt, d1.path());
  DatasetManifest m2 = build_dataset(seqs, opt, d2.path());
  REQUIRE(m.samples.size() > 0);
  CHECK(io::read_file(d1.path() / kManifestFile) == io::read_file(d2.path() / kManifestFile));

  DatasetManifest loaded = DatasetManifest::load(d1.path() / kManifestFile);
  REQUIRE(loaded.samples.size() == m.samples.size());
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const SampleEntry& e = m.samples[i];
    CHECK(e.fold_id == int(e.sequence % opt.folds));
    CHECK(loaded.samples[i].train_copies == e.train_copies);
    CHECK(loaded.samples[i].center == e.center);
  }

  std::vector<int> labels;
  for (const SampleEntry& e : m.samples) labels.push_back(e.cls_label);
  for (int f = 0; f < m.folds(); ++f) {
    const FoldStats& s = m.fold_stats[f];
    CHECK(Index(m.test_view(f).size()) == s.samples);
    if (s.positives > 0 && s.positives < s.samples)
      CHECK(s.train_positive_fraction() == doctest::Approx(0.5).epsilon(0.02));
    for (Index i : m.training_view(f)) CHECK(m.samples[i].fold_id != f);
    CHECK(training_view(m, rebalance_folds(m, labels), f) == m.training_view(f));

    // Held-out constants never see the held-out fold.
    const NormRanges r = m.training_ranges(f);
    double lo = 1e300, hi = -1e300;
    for (int g = 0; g < m.folds(); ++g)
      if (g != f) {
        lo = std::min(lo, m.fold_stats[g].ranges[0].min);
        hi = std::max(hi, m.fold_stats[g].ranges[0].max);
      }
    CHECK(r[0].min == lo);
    CHECK(r[0].max == hi);
  }

  const auto shuffled = shuffle_within_folds(m, labels, 5);
  CHECK(shuffled == shuffle_within_folds(m, labels, 5));
  CHECK(shuffled != labels);
  for (int f = 0; f < m.folds(); ++f) {
    int a = 0, b = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (m.samples[i].fold_id == f) {
        a += labels[i];
        b += shuffled[i];
      }
    CHECK(a == b);
  }

  SampleStore store = SampleStore::load(m);
  REQUIRE(store.size() == Index(m.samples.size()));
  const std::vector<Index> idx = {0, Index(m.samples.size()) - 1};
  const NormRanges ranges = m.training_ranges(-1);
  Batch batch = make_batch(store, idx, ranges);
  CHECK(batch.radar.shape() == Shape{2, 1, 5, 54, 54});
  CHECK(batch.satellite.shape() == Shape{2, 13, 3, 27, 27});
  CHECK(batch.regression.shape() == Shape{2, 1, 48, 48});
  CHECK(batch.radar.data().cwiseAbs().maxCoeff() <= 1.0);
  CHECK(batch.radar[7] == normalize(store.radar(0)[7], ranges[0].min, ranges[0].max));
  CHECK(batch.satellite[kSatellitePatchSize + 99] ==
        normalize(store.satellite(idx[1])[99], ranges[1].min, ranges[1].max));
  CHECK(batch.regression_dbz(1, 5) == store.regression(idx[1])[5]);
  CHECK(batch.labels[1] == m.samples.back().cls_label);
}

TEST_CASE("dataset build rejects impossible options") {
  const auto seqs = synth_generate(small_synth());
  test::TempDir d("ds_bad");
  BuildOptions opt;
  opt.folds = 5;
  CHECK_THROWS_AS(build_dataset(seqs, opt, d.path()), ConfigError);
  opt.folds = 2;
  opt.stride = 0;
  CHECK_THROWS_AS(build_dataset(seqs, opt, d.path()), ConfigError);
}
