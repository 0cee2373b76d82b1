#ifndef TSMT_TESTS_FIXTURES_HPP
#define TSMT_TESTS_FIXTURES_HPP

#include "support.hpp"
#include "tsmt/dataset.hpp"

namespace tsmt::test {

inline data::SyntheticStormConfig tiny_synth() {
  data::SyntheticStormConfig c;
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

/// A few hundred samples over four folds, built once per test binary.
struct TinyDataset {
  TempDir dir{"tiny"};
  data::DatasetManifest manifest;
  data::SampleStore store;

  TinyDataset() {
    data::BuildOptions opt;
    opt.stride = 8;
    manifest = data::build_dataset(data::synth_generate(tiny_synth()), opt, dir.path() / "ds");
    store = data::SampleStore::load(manifest);
  }
};

inline const TinyDataset& tiny_dataset() {
  static const TinyDataset d;
  return d;
}

}  // namespace tsmt::test

#endif  // TSMT_TESTS_FIXTURES_HPP
