#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "twist/scene.hpp"

using namespace twist;

namespace {

SceneConfig busy_config(std::uint64_t seed) {
  SceneConfig c;
  c.seed = seed;
  c.birth_probability = 0.6;
  c.death_probability = 0.02;
  c.max_objects = 8;
  return c;
}

// Cells outside the background band.
int foreground_cells(const SceneConfig& c, const TokenGrid& g) {
  int n = 0;
  for (auto t : g.tokens) n += !c.background.contains(t);
  return n;
}

}  // namespace

TEST(Scene, ValidateRejectsOverlappingBands) {
  SceneConfig c;
  c.vehicle = {20, 40};
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig{};
  c.pedestrian = {48, 70};
  EXPECT_THROW(c.validate(), ConfigError);
  c = SceneConfig{};
  c.density_low = 3;
  c.density_high = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Scene, EpisodeIsDeterministicPerSeed) {
  const auto a = generate_episode(busy_config(3), 40);
  const auto b = generate_episode(busy_config(3), 40);
  const auto c = generate_episode(busy_config(4), 40);
  ASSERT_EQ(a.size(), 40u);
  bool differs = false;
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].grid, b[t].grid);
    EXPECT_EQ(a[t].label, b[t].label);
    differs |= !(a[t].grid == c[t].grid);
  }
  EXPECT_TRUE(differs);
}

TEST(Scene, BackgroundMapIsSharedAcrossObjectSeeds) {
  SceneProcess p1(busy_config(1)), p2(busy_config(99));
  EXPECT_EQ(p1.background(), p2.background());
  auto c = busy_config(1);
  c.map_seed = 2;
  EXPECT_NE(SceneProcess(c).background(), p1.background());
}

TEST(Scene, TokensStayInTheirBands) {
  const auto c = busy_config(7);
  const auto alphabet = TokenAlphabet::make(c.codebook_size);
  for (auto& f : generate_episode(c, 60)) EXPECT_NO_THROW(f.grid.validate(alphabet));
}

TEST(Scene, LabelsFollowObjectCounts) {
  const auto c = busy_config(11);
  const int vsz = c.vehicle_height * c.vehicle_width, psz = c.pedestrian_height * c.pedestrian_width;
  for (auto& f : generate_episode(c, 120)) {
    int veh = 0, ped = 0;
    for (auto t : f.grid.tokens) {
      veh += c.vehicle.contains(t);
      ped += c.pedestrian.contains(t);
    }
    // Objects never overlap, so pixel counts are exact multiples of blob sizes.
    ASSERT_EQ(veh % vsz, 0);
    ASSERT_EQ(ped % psz, 0);
    const int count = veh / vsz + ped / psz;
    EXPECT_EQ(f.label.car, veh > 0 ? 1 : 0);
    EXPECT_EQ(f.label.ped, ped > 0 ? 1 : 0);
    EXPECT_EQ(f.label.den, density_class(c, count));
    EXPECT_EQ(f.priority, count > c.priority_threshold ? 1 : 0);
    EXPECT_EQ(foreground_cells(c, f.grid), veh + ped);
  }
}

TEST(Scene, ObjectCountNeverExceedsMaximum) {
  auto c = busy_config(5);
  c.birth_probability = 1.0;
  c.death_probability = 0.0;
  c.max_objects = 4;
  SceneProcess p(c);
  for (int t = 0; t < 50; ++t) {
    p.advance();
    EXPECT_LE(static_cast<int>(p.objects().size()), 4);
  }
}

TEST(Scene, DensityClassBoundaries) {
  SceneConfig c;  // thresholds 1 and 3
  EXPECT_EQ(density_class(c, 0), 0);
  EXPECT_EQ(density_class(c, 1), 0);
  EXPECT_EQ(density_class(c, 2), 1);
  EXPECT_EQ(density_class(c, 3), 1);
  EXPECT_EQ(density_class(c, 4), 2);
}

TEST(Scene, JsonlRoundTrip) {
  const auto c = busy_config(2);
  const auto ep = generate_episode(c, 10);
  std::stringstream ss;
  write_episode(ss, ep);
  const auto back = read_episode(ss, c.height, c.width, c.codebook_size);
  ASSERT_EQ(back.size(), ep.size());
  for (std::size_t t = 0; t < ep.size(); ++t) {
    EXPECT_EQ(back[t].grid, ep[t].grid);
    EXPECT_EQ(back[t].label, ep[t].label);
    EXPECT_EQ(back[t].priority, ep[t].priority);
  }
}

TEST(Scene, ReadReportsLineOfMalformedInput) {
  std::stringstream ss;
  ss << R"({"t":0,"tokens":[0,1,2,3],"label":[0,0,0],"q":0})" << '\n' << "{not json\n";
  try {
    read_episode(ss, 2, 2, 8);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Scene, ReadRejectsOutOfRangeTokensAndLabels) {
  std::stringstream a(R"({"t":0,"tokens":[0,1,2,9],"label":[0,0,0],"q":0})");
  EXPECT_THROW(read_episode(a, 2, 2, 8), ValidationError);
  std::stringstream b(R"({"t":0,"tokens":[0,1,2,3],"label":[0,0,3],"q":0})");
  EXPECT_THROW(read_episode(b, 2, 2, 8), ValidationError);
  std::stringstream c(R"({"t":0,"tokens":[0,1,2],"label":[0,0,0],"q":0})");
  EXPECT_THROW(read_episode(c, 2, 2, 8), ParseError);
}

TEST(Scene, ConfigJsonRoundTrip) {
  auto c = busy_config(9);
  c.map_seed = 17;
  c.vehicle_width = 2;
  SceneConfig back;
  from_json_into(to_json(c), back);
  EXPECT_EQ(to_json(back), to_json(c));
}
