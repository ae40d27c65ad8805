#pragma once

#include <array>
#include <set>
#include <vector>

#include "mceage/detector.hpp"

namespace oracle {

using mceage::DetectionCandidate;
using mceage::DetectionResult;
using mceage::Laterality;
using mceage::PairRule;

// Written independently of the library: each rule in priority order.
inline mceage::DetectionResult pairing(const std::vector<DetectionCandidate>& c, const std::array<std::array<bool, 3>, 3>& compat) {
  const auto P = [&](int i) { return i < static_cast<int>(c.size()) ? c[i].probability : 0.0; };
  const auto exists = [&](int i) { return i < static_cast<int>(c.size()); };
  const auto ok = [&](int i, int j) {
    if (!exists(i) || !exists(j) || !compat[i][j]) return false;
    const std::set<Laterality> s = {c[i].laterality, c[j].laterality};
    return s == std::set<Laterality>{Laterality::Left, Laterality::Right};
  };
  struct Rule {
    bool fires;
    int a, b;
    PairRule tag;
  };
  const Rule rules[] = {
      {P(1) >= 0.5 && P(2) < 0.5 && ok(0, 1), 0, 1, PairRule::FastPath},
      {ok(0, 1), 0, 1, PairRule::PairX1X2},
      {ok(0, 2), 0, 2, PairRule::PairX1X3},
      {exists(0) && P(0) > 0.5, 0, -1, PairRule::SingleX1},
  };
  DetectionResult out;
  for (const Rule& rule : rules) {
    if (!rule.fires) continue;
    out.rule = rule.tag;
    for (int idx : {rule.a, rule.b}) {
      if (idx < 0) continue;
      switch (c[idx].laterality) {
        case Laterality::Right: out.right = c[idx].componentId; break;
        case Laterality::Left: out.left = c[idx].componentId; break;
        case Laterality::Unknown: out.unassigned = c[idx].componentId; break;
      }
    }
    return out;
  }
  return out;
}

}  // namespace oracle
