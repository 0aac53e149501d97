#pragma once

// Lesion selection: mutual class<->patch attention scores and top-K token
// selection. Scores drive which token VALUES are gathered; the selection
// indices themselves are not differentiated (straight-through gather).

#include <algorithm>
#include <numeric>
#include <vector>

#include "mtvit/backbone.hpp"
#include "mtvit/mat.hpp"

namespace mtvit {

template <typename T>
struct SelectionResult {
  std::vector<T> scores;     // s_n, length N_p
  std::vector<int> indices;  // K distinct patch indices in 1..N_p, by descending score
};

// Mutual attention score per patch token. For each head: softmax over the
// class-token row entries A[0, 1..N_p] and over the class-token column
// entries A[1..N_p, 0] (the class self-entry A[0,0] is excluded from both),
// then s_n = mean over heads of the product of the two normalised scores.
// Note the row/column entries are themselves post-softmax attention values;
// the second softmax is applied on top of them as specified.
template <typename T>
std::vector<T> mutual_scores(const AttentionRecord<T>& record) {
  if (record.heads.empty()) throw ConfigError("attention record has no heads");
  const int np = record.heads[0].rows - 1;
  std::vector<T> s(np, T(0));
  std::vector<T> row(np), col(np);
  for (const Mat<T>& a : record.heads) {
    softmax_strided(a.row(0) + 1, 1, np, row.data());                   // a_{0,n}
    softmax_strided(&a.at(1, 0), static_cast<size_t>(a.cols), np, col.data());  // a_{n,0}
    for (int n = 0; n < np; ++n) s[n] += row[n] * col[n];
  }
  const T inv = T(1) / T(record.heads.size());
  for (T& v : s) v *= inv;
  return s;
}

// Arithmetic mean of mutual_scores over the layers feeding one task head.
template <typename T>
std::vector<T> head_scores(const std::vector<AttentionRecord<T>>& records) {
  if (records.empty()) throw ConfigError("head_scores needs at least one attention record");
  std::vector<T> acc = mutual_scores(records[0]);
  for (size_t r = 1; r < records.size(); ++r) {
    const std::vector<T> s = mutual_scores(records[r]);
    for (size_t n = 0; n < acc.size(); ++n) acc[n] += s[n];
  }
  const T inv = T(1) / T(records.size());
  for (T& v : acc) v *= inv;
  return acc;
}

// Top-K patch indices by score, ties broken by lower patch index. Returned
// indices are 1-based token rows (patch n scores live at s[n-1]); the class
// token (row 0) is never selected.
template <typename T>
SelectionResult<T> select_top_k(const std::vector<T>& scores, int k) {
  const int np = static_cast<int>(scores.size());
  if (k < 1 || k > np) throw ConfigError("select_top_k: K out of range");
  std::vector<int> order(np);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  SelectionResult<T> out;
  out.scores = scores;
  out.indices.reserve(k);
  for (int i = 0; i < k; ++i) out.indices.push_back(order[i] + 1);
  return out;
}

}  // namespace mtvit
