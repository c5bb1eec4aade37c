#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <set>

#include "doctest.h"
#include "lingo/dataset.hpp"
#include "lingo/env.hpp"
#include "lingo/grammar.hpp"
#include "lingo/vocab.hpp"

using namespace lingo;

namespace {

struct Fixture {
  ConceptDataset data{DatasetManifest::preset("desk_train")};
  Vocabulary vocab{Vocabulary::build(
      DatasetManifest::preset("desk_train").class_names(), 8)};
  Grammar grammar{&vocab, false};
  EnvConfig config;

  Session session(std::uint64_t seed) {
    return Session(&data, &grammar, config, seed);
  }

  // first session (by seed scan) whose opening act matches
  Session session_with(TeacherActKind kind, std::uint64_t from = 0) {
    for (std::uint64_t s = from; s < from + 10000; ++s) {
      Session sess = session(s);
      if (sess.observation().teacher_act == kind) return sess;
    }
    FAIL("no session found with the requested opening act");
    return session(0);
  }

  std::vector<int> correct_statement(const Session& s) {
    return vocab.encode("this is " +
                        data.class_name(s.current_class()));
  }
  std::vector<int> wrong_statement(const Session& s) {
    for (int c = 0; c < data.num_classes(); ++c)
      if (c != s.current_class())
        return vocab.encode("this is " + data.class_name(c));
    FAIL("no wrong class available");
    return {};
  }
};

}  // namespace

TEST_CASE("synthetic images are deterministic, bounded and class-separable") {
  Tensor a = synth_image(7001, 16, 3, 2);
  Tensor b = synth_image(7001, 16, 3, 2);
  CHECK(a.v == b.v);
  for (double x : a.v) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }

  // mean inter-class L2 exceeds mean intra-class L2 (10 classes, 5 instances)
  std::vector<std::vector<Tensor>> imgs(10);
  for (int c = 0; c < 10; ++c)
    for (int i = 0; i < 5; ++i) imgs[c].push_back(synth_image(7001, 16, c, i));
  auto l2 = [](const Tensor& x, const Tensor& y) {
    double s = 0;
    for (std::size_t i = 0; i < x.v.size(); ++i)
      s += (x.v[i] - y.v[i]) * (x.v[i] - y.v[i]);
    return std::sqrt(s);
  };
  double intra = 0, inter = 0;
  int n_intra = 0, n_inter = 0;
  for (int c = 0; c < 10; ++c)
    for (int i = 0; i < 5; ++i)
      for (int j = i + 1; j < 5; ++j) intra += l2(imgs[c][i], imgs[c][j]), ++n_intra;
  for (int c = 0; c < 10; ++c)
    for (int d = c + 1; d < 10; ++d) inter += l2(imgs[c][0], imgs[d][0]), ++n_inter;
  CHECK(inter / n_inter > intra / n_intra);
}

TEST_CASE("dataset presets mirror the reference sizes") {
  auto animal = DatasetManifest::preset("animal");
  CHECK(animal.classes.size() == 40);
  CHECK(animal.total_images() == 408);
  auto fruit = DatasetManifest::preset("fruit");
  CHECK(fruit.classes.size() == 16);
  CHECK(fruit.total_images() == 48);

  ConceptDataset train(DatasetManifest::preset("desk_train"));
  ConceptDataset test(DatasetManifest::preset("desk_test"));
  CHECK(train.classes_disjoint_from(test));
  CHECK(train.num_classes() == 8);
  CHECK(test.num_classes() == 4);
}

TEST_CASE("manifest save/load round trip") {
  auto m = DatasetManifest::preset("desk_test");
  const std::string path = "manifest_roundtrip.json";
  m.save(path);
  auto l = DatasetManifest::load(path);
  CHECK(l.split == m.split);
  CHECK(l.generator_seed == m.generator_seed);
  CHECK(l.image_size == m.image_size);
  CHECK(l.classes == m.classes);
  std::remove(path.c_str());
}

TEST_CASE("sample_instance honors the variation ratio") {
  ConceptDataset data(DatasetManifest::preset("desk_train"));
  Rng rng(4);
  for (int i = 0; i < 200; ++i)
    CHECK(data.sample_instance(0, 0.0, rng) == 0);

  int canonical = 0;
  for (int i = 0; i < 10000; ++i)
    if (data.sample_instance(0, 1.0, rng) == 0) ++canonical;
  CHECK(canonical == 0);

  canonical = 0;
  for (int i = 0; i < 10000; ++i)
    if (data.sample_instance(0, 0.5, rng) == 0) ++canonical;
  CHECK(std::abs(canonical / 10000.0 - 0.5) <= 0.02);
}

TEST_CASE("reset is deterministic and samples two distinct classes") {
  Fixture f;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Session a = f.session(seed);
    Session b = f.session(seed);
    CHECK(a.observation().teacher_tokens == b.observation().teacher_tokens);
    CHECK(a.observation().image.v == b.observation().image.v);
    CHECK(a.observation().teacher_act == b.observation().teacher_act);
    CHECK(a.sampled_classes() == b.sampled_classes());
    CHECK(a.sampled_classes().first != a.sampled_classes().second);
  }
  // all three opening acts occur
  std::set<TeacherActKind> acts;
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    acts.insert(f.session(seed).observation().teacher_act);
  CHECK(acts.size() == 3);
}

TEST_CASE("reward protocol matches the game rules for all combinations") {
  Fixture f;
  auto question = f.vocab.encode("what is it");
  auto invalid = f.vocab.encode("is is");

  for (TeacherActKind ctx :
       {TeacherActKind::Question, TeacherActKind::Silence}) {
    {
      Session s = f.session_with(ctx);
      auto tr = s.step(question);
      CHECK(tr.reward == doctest::Approx(0.1));
      CHECK(!tr.done);
      // the teacher states the object's name next, same image
      CHECK(f.grammar.judge(tr.feedback_tokens, s.current_class_token()) ==
            UtteranceClass::CorrectStatement);
      CHECK(s.current_taught());
    }
    {
      Session s = f.session_with(ctx);
      auto tr = s.step({f.vocab.eos()});  // silence
      CHECK(tr.reward == doctest::Approx(-1.0));
      CHECK(f.grammar.judge(tr.feedback_tokens, s.current_class_token()) ==
            UtteranceClass::CorrectStatement);
    }
    {
      Session s = f.session_with(ctx);
      auto tr = s.step(f.correct_statement(s));
      CHECK(tr.reward == doctest::Approx(1.0));
      CHECK(tr.done);
    }
    {
      Session s = f.session_with(ctx);
      auto tr = s.step(f.wrong_statement(s));
      CHECK(tr.reward == doctest::Approx(-1.0));
      CHECK(!tr.done);
    }
    {
      Session s = f.session_with(ctx);
      auto tr = s.step(invalid);
      CHECK(tr.reward == doctest::Approx(-1.0));
    }
  }

  // statement context: zero for a correct echo, -1 otherwise
  {
    Session s = f.session_with(TeacherActKind::Statement);
    auto tr = s.step(f.correct_statement(s));
    CHECK(tr.reward == doctest::Approx(0.0));
    CHECK(!tr.done);
  }
  for (auto bad : {std::vector<int>{}, question, invalid}) {
    Session s = f.session_with(TeacherActKind::Statement);
    auto tr = s.step(bad);
    CHECK(tr.reward == doctest::Approx(-1.0));
  }
  {
    Session s = f.session_with(TeacherActKind::Statement);
    auto tr = s.step(f.wrong_statement(s));
    CHECK(tr.reward == doctest::Approx(-1.0));
  }
}

TEST_CASE("all-silent learner fails with the session floor reward") {
  Fixture f;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Session s = f.session(seed);
    int steps = 0;
    while (!s.done()) {
      s.step({f.vocab.eos()});
      ++steps;
    }
    CHECK(steps == f.config.max_steps);
    CHECK(!s.success());
    CHECK(s.total_reward() == doctest::Approx(-6.0));
    CHECK_THROWS_AS(s.step({f.vocab.eos()}), std::runtime_error);
  }
}

TEST_CASE("scripted ideal policy always succeeds") {
  Fixture f;
  int successes = 0, sessions = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Session s = f.session(seed);
    while (!s.done()) {
      std::vector<int> reply;
      if (s.observation().teacher_act == TeacherActKind::Statement ||
          s.current_taught()) {
        reply = f.correct_statement(s);
      } else {
        reply = f.vocab.encode("what is it");
      }
      s.step(reply);
    }
    ++sessions;
    if (s.success()) ++successes;
    CHECK(s.step_index() <= f.config.max_steps);
  }
  CHECK(successes == sessions);
}

TEST_CASE("session success criterion") {
  // all-silent violates every clause
  std::vector<TurnRecord> silent = {
      {TeacherActKind::Question, false, UtteranceClass::Silence, -1},
      {TeacherActKind::Statement, true, UtteranceClass::Silence, -1}};
  CHECK(!session_success(silent, true));

  // ask about novel object, get taught, then answer correctly
  std::vector<TurnRecord> fig1 = {
      {TeacherActKind::Silence, false, UtteranceClass::Question, 0.1},
      {TeacherActKind::Statement, true, UtteranceClass::CorrectStatement, 0},
      {TeacherActKind::Question, true, UtteranceClass::CorrectStatement, 1}};
  CHECK(session_success(fig1, true));

  // question about an already-taught object breaks success under the strict
  // default but is tolerated with the switch off
  std::vector<TurnRecord> retaught = {
      {TeacherActKind::Silence, false, UtteranceClass::Question, 0.1},
      {TeacherActKind::Statement, true, UtteranceClass::CorrectStatement, 0},
      {TeacherActKind::Question, true, UtteranceClass::Question, 0.1},
      {TeacherActKind::Statement, true, UtteranceClass::CorrectStatement, 0}};
  CHECK(!session_success(retaught, true));
  CHECK(session_success(retaught, false));

  // a correct statement in silence context about an untaught object does not
  // count
  std::vector<TurnRecord> lucky = {
      {TeacherActKind::Silence, false, UtteranceClass::CorrectStatement, 1}};
  CHECK(!session_success(lucky, true));

  // ending on a question is not a success even if every turn was correct
  std::vector<TurnRecord> dangling = {
      {TeacherActKind::Question, false, UtteranceClass::Question, 0.1}};
  CHECK(!session_success(dangling, true));
}

TEST_CASE("taught objects persist within the session") {
  Fixture f;
  // drive sessions until one reaches a silence turn about a taught object,
  // then a correct statement ends it with +1
  bool exercised = false;
  for (std::uint64_t seed = 0; seed < 3000 && !exercised; ++seed) {
    Session s = f.session(seed);
    while (!s.done()) {
      if (s.observation().teacher_act == TeacherActKind::Statement) {
        s.step(f.correct_statement(s));
      } else if (s.current_taught()) {
        auto tr = s.step(f.correct_statement(s));
        CHECK(tr.reward == doctest::Approx(1.0));
        CHECK(tr.done);
        exercised = true;
      } else {
        s.step(f.vocab.encode("what"));
      }
    }
  }
  CHECK(exercised);
}
