#include <doctest.h>

#include <random>

#include "campuswh/bench.hpp"
#include "campuswh/cube.hpp"
#include "campuswh/error.hpp"
#include "campuswh/olap.hpp"
#include "cube_oracle.hpp"
#include "fixtures.hpp"
#include "planted.hpp"

using namespace cwh;
using testing::TempDir;

namespace {

std::string random_token(std::mt19937_64& rng, const std::string& alphabet, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s(len(rng), ' ');
  for (auto& c : s) c = alphabet[pick(rng)];
  return s;
}

std::multiset<std::vector<std::string>> as_multiset(const std::vector<Record>& recs) {
  std::multiset<std::vector<std::string>> out;
  for (const auto& r : recs) out.insert(r.fields);
  return out;
}

}  // namespace

TEST_CASE("qualify_key is injective for separator-free tenants") {
  std::mt19937_64 rng(1);
  std::map<std::string, std::pair<std::string, std::string>> seen;
  for (int i = 0; i < 20000; ++i) {
    const std::string tenant = random_token(rng, "ab1", 3);
    const std::string raw = random_token(rng, "a_1", 3);
    const std::string q = qualify_key(TenantKey(tenant), raw);
    auto [it, fresh] = seen.emplace(q, std::make_pair(tenant, raw));
    if (!fresh) CHECK(it->second == std::make_pair(tenant, raw));
  }
}

TEST_CASE("split_size stays within [s_min, s_max]") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::uint64_t> d(1, 1ull << 40);
  for (int i = 0; i < 10000; ++i) {
    SplitConfig cfg{d(rng), d(rng), d(rng)};
    if (cfg.s_min > cfg.s_max) std::swap(cfg.s_min, cfg.s_max);
    const auto s = split_size(cfg);
    CHECK(s >= cfg.s_min);
    CHECK(s <= cfg.s_max);
  }
}

TEST_CASE("planned splits reassemble the file and start at line starts") {
  std::mt19937_64 rng(3);
  TempDir dir;
  for (int round = 0; round < 200; ++round) {
    std::string body;
    const auto lines = std::uniform_int_distribution<int>(1, 80)(rng);
    for (int i = 0; i < lines; ++i) body += random_token(rng, "xyz,", 40) + "\n";
    if (rng() % 4 == 0) body += "tail-without-newline";
    testing::write_text(dir / "f", body);
    const std::uint64_t s = std::uniform_int_distribution<std::uint64_t>(1, 200)(rng);
    const auto mode = rng() % 2 ? SplitMode::kCase1 : SplitMode::kCase2;
    const auto plan = plan_splits(dir / "f", SplitConfig{s, s, s}, mode);
    std::string joined;
    std::uint64_t expected_offset = 0;
    for (const auto& sp : plan.splits) {
      CHECK(sp.offset == expected_offset);
      CHECK(sp.length > 0);
      CHECK((sp.offset == 0 || body[sp.offset - 1] == '\n'));
      joined += body.substr(sp.offset, sp.length);
      expected_offset = sp.end();
    }
    CHECK(joined == body);
    CHECK(plan.n_m() <= mapper_count(plan.s_ip, plan.s_split));
  }
}

TEST_CASE("grouping_id is a bijection for k <= 8") {
  for (std::size_t k = 0; k <= 8; ++k) {
    std::set<std::uint64_t> ids;
    for (std::uint64_t pattern = 0; pattern < (1ull << k); ++pattern) {
      bool present[8] = {};
      for (std::size_t j = 0; j < k; ++j) present[j] = pattern >> j & 1;
      const auto id = grouping_id(std::span<const bool>(present, k));
      CHECK(id < (1ull << k));
      ids.insert(id);
      const auto back = presence_of(id, k);
      for (std::size_t j = 0; j < k; ++j) CHECK(back[j] == present[j]);
    }
    CHECK(ids.size() == (1ull << k));
  }
}

TEST_CASE("cube equals oracle and coarse rows are merges of finest rows") {
  std::mt19937_64 rng(4);
  for (int round = 0; round < 15; ++round) {
    CAPTURE(round);
    TempDir dir;
    SegmentStore store(dir / "wh");
    const auto c = testing::random_cube_case(rng, store, dir.path(), 300, 4);
    const auto cube = build_cube(store, builtin_schema(), c.spec, {3});
    CHECK(testing::compare_with_oracle(*cube, testing::oracle_for(c)) == "");

    const std::size_t k = c.spec.k();
    const std::uint64_t full = (1ull << k) - 1;
    for (const auto& row : cube->rows) {
      Accumulator marks;
      std::uint64_t support = 0;
      for (const auto& fine : cube->rows) {
        if (fine.grouping_id != full || fine.mandatory != row.mandatory) continue;
        bool match = true;
        for (std::size_t a = 0; a < k && match; ++a) {
          if (row.attrs[a]) match = fine.attrs[a] == row.attrs[a];
        }
        if (!match) continue;
        marks.merge(fine.aggregates[0]);
        support += fine.support_count;
      }
      CHECK(support == row.support_count);
      CHECK(marks.count == row.aggregates[0].count);
      CHECK(testing::close_rel(marks.sum, row.aggregates[0].sum));
    }
  }
}

TEST_CASE("dedupe keeps exactly the latest batch per key") {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 30; ++round) {
    TempDir dir;
    SegmentStore store(dir.path());
    std::map<std::string, std::string> latest;
    const int batches = std::uniform_int_distribution<int>(1, 5)(rng);
    for (int b = 1; b <= batches; ++b) {
      std::string body;
      std::map<std::string, std::string> in_batch;
      const int rows = std::uniform_int_distribution<int>(0, 20)(rng);
      for (int r = 0; r < rows; ++r) {
        const std::string key = "k" + std::to_string(rng() % 12);
        const std::string val = "b" + std::to_string(b) + "r" + std::to_string(r);
        body += key + "," + val + "\n";
        in_batch[key] = val;  // later line in the batch wins
      }
      const auto p = store.new_staging_path("t");
      testing::write_text(p, body);
      store.commit_batch("T", {p, static_cast<std::uint64_t>(rows)});
      for (auto& [k, v] : in_batch) latest[k] = v;
    }
    const std::size_t key[] = {0};
    std::map<std::string, std::string> got;
    for (const auto& r : store.scan("T", Dedupe::kOn, key)) {
      CHECK(got.emplace(r.fields[0], r.fields[1]).second);
    }
    CHECK(got == latest);
  }
}

TEST_CASE("commits are atomic under injected crashes") {
  std::mt19937_64 rng(6);
  TempDir dir;
  SegmentStore store(dir.path());
  std::multiset<std::vector<std::string>> committed;
  for (int round = 0; round < 60; ++round) {
    std::string body;
    std::vector<std::vector<std::string>> rows;
    const int n = std::uniform_int_distribution<int>(0, 30)(rng);
    for (int i = 0; i < n; ++i) {
      rows.push_back({"r" + std::to_string(round), std::to_string(i)});
      body += rows.back()[0] + "," + rows.back()[1] + "\n";
    }
    const auto p = store.new_staging_path("t");
    testing::write_text(p, body);
    const int fault = static_cast<int>(rng() % 3);  // none, before move, after move
    store.set_fault_hook([fault](std::string_view point) {
      if ((fault == 1 && point == "commit.before_move") || (fault == 2 && point == "commit.after_move")) {
        throw Error(ErrorCode::kIo, "crash");
      }
    });
    bool threw = false;
    try {
      store.commit_batch("T", {p, static_cast<std::uint64_t>(n)});
    } catch (const Error&) {
      threw = true;
    }
    store.set_fault_hook({});
    const auto now = as_multiset(store.scan("T", Dedupe::kOff));
    auto post = committed;
    for (auto& r : rows) post.insert(r);
    CHECK((now == committed || now == post));
    if (fault == 1) CHECK(now == committed);
    if (!threw) CHECK(now == post);
    committed = now;
  }
}

TEST_CASE("ETL rejects exactly the planted lines and changes nothing") {
  std::mt19937_64 rng(7);
  TempDir dir;
  SegmentStore store(dir / "wh");
  const TenantKey tenant("U1");
  for (int round = 0; round < 25; ++round) {
    CAPTURE(round);
    const auto f = testing::planted_file(rng, dir / "in.csv", 6);
    const std::uint64_t s = std::uniform_int_distribution<std::uint64_t>(512, 16384)(rng);
    const auto mode = rng() % 2 ? SplitMode::kCase1 : SplitMode::kCase2;
    const auto before = testing::snapshot(dir / "wh");
    const auto r = run_etl(store, builtin_schema(), f.path, "StudentPerformance", tenant, mode, {s, s, s},
                           EtlOptions{3});
    std::set<std::uint64_t> reported;
    for (const auto& e : r.report.entries) reported.insert(e.line_number);
    CHECK(reported == f.bad_lines);
    if (f.bad_lines.empty()) {
      CHECK(r.committed());
      CHECK(r.rows_out == f.data_lines);
      store.drop_batch("StudentPerformance", r.segment->batch_id);
    } else {
      CHECK_FALSE(r.committed());
      CHECK(testing::snapshot(dir / "wh") == before);
    }
  }
}

TEST_CASE("every query row belongs to the session tenant") {
  std::mt19937_64 rng(8);
  for (int round = 0; round < 5; ++round) {
    TempDir dir;
    SegmentStore store(dir / "wh");
    const auto c = testing::random_cube_case(rng, store, dir.path(), 200, 3);
    const auto cube = build_cube(store, builtin_schema(), c.spec, {2});
    std::set<std::uint64_t> all;
    for (std::uint64_t m = 0; m < (1ull << c.spec.k()); ++m) all.insert(m);
    for (const char* t : {"UA", "UB"}) {
      const auto r = query_cube(TenantContext{TenantKey(t), ""}, *cube, all, {{"university_key", "UA"}});
      for (const auto& row : r.rows) CHECK(row.mandatory[0] == t);
    }
  }
}

TEST_CASE("remove_outliers returns an ordered sub-multiset") {
  std::mt19937_64 rng(9);
  for (int round = 0; round < 300; ++round) {
    std::vector<double> v(std::uniform_int_distribution<std::size_t>(4, 60)(rng));
    for (auto& x : v) x = std::uniform_int_distribution<int>(0, 20)(rng);
    const auto r = bench::remove_outliers(v, {rng() % 2 == 0});
    std::size_t i = 0;
    for (double s : r.survivors) {
      while (i < v.size() && v[i] != s) ++i;
      CHECK(i < v.size());
      ++i;
    }
    CHECK_FALSE(r.survivors.empty());
  }
}
