#include "sfanc/signal.hpp"

#include <gtest/gtest.h>

#include "sfanc/rng.hpp"

using namespace sfanc;

TEST(Stft, DcInputConcentratesInBinZero) {
  std::vector<double> x(8000, 1.0);
  const auto sg = stft(x);
  for (std::size_t t = 0; t < sg.n_frames; ++t) {
    const double ref = std::abs(sg.at(t, 0));
    ASSERT_GT(ref, 0.0);
    for (std::size_t k = 2; k < sg.n_freq; ++k)
      EXPECT_LE(std::abs(sg.at(t, k)), 1e-10 * ref);
  }
}

TEST(Stft, BinCenteredSineDominatesItsBin) {
  // f = 32 * 16000 / 1024 = 500 Hz lands exactly on bin 32
  std::vector<double> x(8000);
  for (std::size_t n = 0; n < x.size(); ++n)
    x[n] = std::sin(2.0 * kPi * 500.0 * static_cast<double>(n) / 16000.0);
  const auto sg = stft(x);
  for (std::size_t t = 0; t < sg.n_frames; ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < sg.n_freq; ++k)
      if (std::abs(sg.at(t, k)) > std::abs(sg.at(t, best))) best = k;
    EXPECT_EQ(best, 32u);
  }
}

TEST(Stft, PerFramParsevalIdentity) {
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> x(2048 + 64 * 3);
    for (double& v : x) v = rng.normal();
    const auto sg = stft(x, 1024, 64);
    const auto w = hann_window(1024);
    for (std::size_t t = 0; t < sg.n_frames; ++t) {
      double time_energy = 0.0;
      for (std::size_t n = 0; n < 1024; ++n) {
        const double wx = w[n] * x[t * 64 + n];
        time_energy += wx * wx;
      }
      // two-sided accounting from the one-sided bins
      double freq_energy = std::norm(sg.at(t, 0)) + std::norm(sg.at(t, 512));
      for (std::size_t k = 1; k < 512; ++k) freq_energy += 2.0 * std::norm(sg.at(t, k));
      EXPECT_NEAR(freq_energy, 1024.0 * time_energy, 1e-9 * 1024.0 * time_energy);
    }
  }
}

TEST(Stft, RejectsShortSignal) {
  std::vector<double> x(1023, 1.0);
  EXPECT_THROW(stft(x), std::invalid_argument);
}

TEST(Features, ShapeIsFixedByFrameAndStftGeometry) {
  std::vector<std::vector<double>> frame(4, std::vector<double>(8000, 0.0));
  Rng rng(2);
  for (auto& ch : frame)
    for (double& v : ch) v = rng.normal();
  const auto f = features(frame);
  ASSERT_EQ(f.dims.size(), 3u);
  EXPECT_EQ(f.dims[0], 8u);    // 2J
  EXPECT_EQ(f.dims[1], 513u);  // win/2 + 1
  EXPECT_EQ(f.dims[2], 110u);  // (8000 - 1024)/64 + 1
}

TEST(Features, ZeroFrameGivesZeroMagnitudeAndZeroPhase) {
  std::vector<std::vector<double>> frame(4, std::vector<double>(8000, 0.0));
  const auto f = features(frame);
  for (float v : f.data) EXPECT_EQ(v, 0.0f);
}

TEST(Features, ScalingDoublesMagnitudeOnly) {
  Rng rng(4);
  std::vector<std::vector<double>> frame(2, std::vector<double>(8000));
  for (auto& ch : frame)
    for (double& v : ch) v = rng.normal();
  auto doubled = frame;
  for (auto& ch : doubled)
    for (double& v : ch) v *= 2.0;

  const auto f1 = features(frame);
  const auto f2 = features(doubled);
  const std::size_t plane = 513 * 110;
  for (std::size_t i = 0; i < 2 * plane; ++i)
    EXPECT_NEAR(f2.data[i], 2.0f * f1.data[i], 1e-4f * std::abs(f1.data[i]) + 1e-12f);
  for (std::size_t i = 2 * plane; i < 4 * plane; ++i)
    EXPECT_NEAR(f2.data[i], f1.data[i], 1e-5f);
}

TEST(Features, RejectsWrongFrameLength) {
  std::vector<std::vector<double>> frame(4, std::vector<double>(4000, 0.0));
  EXPECT_THROW(features(frame), std::invalid_argument);
}

TEST(BandlimitedNoise, OutOfBandRejection) {
  Rng rng(31);
  const auto x = bandlimited_noise(20.0, 2020.0, 10.0, 16000.0, rng);
  const auto psd = welch_psd(x, 16000.0);
  const double in_band = band_mean_power(psd, 100.0, 1900.0);
  const double out_band = band_mean_power(psd, 2500.0, 7500.0);
  EXPECT_GE(10.0 * std::log10(in_band / out_band), 40.0);

  Rng rng2(32);
  const auto y = bandlimited_noise(100.0, 700.0, 10.0, 16000.0, rng2);
  const auto psd_y = welch_psd(y, 16000.0);
  const double in_y = band_mean_power(psd_y, 150.0, 650.0);
  const double out_y = band_mean_power(psd_y, 2500.0, 7500.0);
  EXPECT_GE(10.0 * std::log10(in_y / out_y), 40.0);
}

TEST(BandlimitedNoise, UnitVarianceAndDeterminism) {
  Rng a(77), b(77);
  const auto x = bandlimited_noise(20.0, 2020.0, 2.0, 16000.0, a);
  const auto y = bandlimited_noise(20.0, 2020.0, 2.0, 16000.0, b);
  ASSERT_EQ(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i], y[i]);
  double power = 0.0;
  for (double v : x) power += v * v;
  EXPECT_NEAR(power / static_cast<double>(x.size()), 1.0, 1e-9);
}

TEST(BandlimitedNoise, RejectsInvalidBand) {
  Rng rng(1);
  EXPECT_THROW(bandlimited_noise(700.0, 100.0, 1.0, 16000.0, rng), std::invalid_argument);
  EXPECT_THROW(bandlimited_noise(100.0, 9000.0, 1.0, 16000.0, rng), std::invalid_argument);
}

TEST(WelchPsd, IntegratesToVariance) {
  Rng rng(9);
  std::vector<double> x(30 * 16000);
  for (double& v : x) v = rng.normal();
  const auto psd = welch_psd(x, 16000.0);
  double integral = 0.0;
  for (double p : psd.power) integral += p * psd.df;
  EXPECT_NEAR(integral, 1.0, 0.05);
}

TEST(WelchPsd, QuadraticScaling) {
  Rng rng(10);
  std::vector<double> x(5 * 16000);
  for (double& v : x) v = rng.normal();
  auto x2 = x;
  for (double& v : x2) v *= 2.0;
  const auto p1 = welch_psd(x, 16000.0);
  const auto p2 = welch_psd(x2, 16000.0);
  for (std::size_t k = 0; k < p1.power.size(); ++k)
    EXPECT_DOUBLE_EQ(p2.power[k], 4.0 * p1.power[k]);
}

TEST(WelchPsd, TonePeakLandsAtNearestBin) {
  std::vector<double> x(5 * 16000);
  for (std::size_t n = 0; n < x.size(); ++n)
    x[n] = std::sin(2.0 * kPi * 400.0 * static_cast<double>(n) / 16000.0);
  const auto psd = welch_psd(x, 16000.0);
  std::size_t best = 0;
  for (std::size_t k = 1; k < psd.power.size(); ++k)
    if (psd.power[k] > psd.power[best]) best = k;
  const auto expected = static_cast<std::size_t>(std::llround(400.0 / psd.df));
  EXPECT_EQ(best, expected);
}

TEST(WelchPsd, RejectsShortSignal) {
  std::vector<double> x(1000, 1.0);
  EXPECT_THROW(welch_psd(x, 16000.0), std::invalid_argument);
}

TEST(NoiseReduction, AncOffIsZeroDb) {
  std::vector<double> d(16000);
  Rng rng(6);
  for (double& v : d) v = rng.normal();
  const auto nr = noise_reduction_series(d, d, 16000.0);
  ASSERT_EQ(nr.size(), 2u);
  for (double v : nr) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(NoiseReduction, HalvedErrorGivesSixDb) {
  std::vector<double> d(16000), e(16000);
  Rng rng(8);
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = rng.normal();
    e[i] = d[i] / 2.0;
  }
  const auto nr = noise_reduction_series(d, e, 16000.0);
  for (double v : nr) EXPECT_NEAR(v, 10.0 * std::log10(4.0), 1e-9);
}

TEST(NoiseReduction, ZeroErrorHitsFloor) {
  std::vector<double> d(16000, 1.0), e(16000, 0.0);
  const auto nr = noise_reduction_series(d, e, 16000.0);
  for (double v : nr) EXPECT_NEAR(v, 120.0, 1e-9);
}

TEST(NoiseReduction, ScaleInvariant) {
  Rng rng(12);
  std::vector<double> d(16000), e(16000);
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = rng.normal();
    e[i] = 0.3 * rng.normal();
  }
  auto d2 = d, e2 = e;
  for (double& v : d2) v *= 7.5;
  for (double& v : e2) v *= 7.5;
  const auto a = noise_reduction_series(d, e, 16000.0);
  const auto b = noise_reduction_series(d2, e2, 16000.0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST(NoiseReduction, RejectsLengthMismatch) {
  std::vector<double> d(16000, 1.0), e(15999, 1.0);
  EXPECT_THROW(noise_reduction_series(d, e, 16000.0), std::invalid_argument);
}
