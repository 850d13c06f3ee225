#include <doctest.h>
#include <httplib.h>

#include <future>
#include <thread>

#include "dppt/label_queue.hpp"
#include "dppt/label_server.hpp"
#include "test_util.hpp"

using namespace dppt::labels;
using nlohmann::json;
using namespace std::chrono_literals;

TEST_CASE("queue post results") {
  LabelQueue q(1s);
  CHECK(q.pending().empty());
  const auto a = q.enqueue("throw", json{{"k", 1}});
  const auto b = q.enqueue("grasp", json{{"k", 2}});
  CHECK(q.pending().size() == 2);
  CHECK(q.post_label(a, 0.5) == PostResult::invalid_value);
  CHECK(q.post_label(99, 2.0) == PostResult::not_found);
  CHECK(q.post_label(a, 2.0) == PostResult::ok);
  CHECK(q.post_label(a, -1.0) == PostResult::duplicate);
  REQUIRE(q.pending().size() == 1);
  CHECK(q.pending()[0].id == b);
  CHECK(q.wait_for_label(a) == 2.0);
  REQUIRE(q.label_log().size() == 1);
  CHECK(q.label_log()[0].value == 2.0);
  CHECK((*q.trace(b))["k"] == 2);
  CHECK_FALSE(q.trace(42).has_value());
}

TEST_CASE("waiting for a label") {
  LabelQueue q(5s);
  const auto id = q.enqueue("throw", json::object());
  auto waiter = std::async(std::launch::async, [&] { return q.wait_for_label(id); });
  std::this_thread::sleep_for(20ms);
  CHECK(q.post_label(id, 1.0) == PostResult::ok);
  CHECK(waiter.get() == 1.0);
}

TEST_CASE("timeout expires the episode") {
  LabelQueue q(30ms);
  const auto id = q.enqueue("throw", json::object());
  CHECK_FALSE(q.wait_for_label(id).has_value());
  CHECK(q.pending().empty());
  CHECK(q.post_label(id, 2.0) == PostResult::duplicate);
}

TEST_CASE("closing releases waiters") {
  LabelQueue q(10s);
  const auto id = q.enqueue("grasp", json::object());
  auto waiter = std::async(std::launch::async, [&] { return q.wait_for_label(id); });
  std::this_thread::sleep_for(20ms);
  q.close();
  CHECK_FALSE(waiter.get().has_value());
  CHECK(q.closed());
  CHECK(q.post_label(id, 2.0) == PostResult::closed);
  CHECK_THROWS(q.enqueue("grasp", json::object()));
}

TEST_CASE("label log file round trip") {
  const auto path = test_util::scratch_dir("labels") / "labels.jsonl";
  append_label(path, {0, 1, 2.0});
  append_label(path, {3, 4, -1.0});
  const auto log = read_label_log(path);
  REQUIRE(log.size() == 2);
  CHECK(log[1].episode == 3);
  CHECK(log[1].id == 4);
  CHECK(log[1].value == -1.0);
  CHECK_THROWS(read_label_log(path.parent_path() / "none.jsonl"));
}

TEST_CASE("http surface") {
  LabelQueue q(1s);
  LabelServer server(q);
  const int port = server.start();
  REQUIRE(port > 0);
  CHECK(server.running());
  httplib::Client cli("127.0.0.1", port);

  auto res = cli.Get("/api/episodes/pending");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body) == json::array());

  const auto id = q.enqueue("throw", json{{"landing_x", 0.4}});
  q.enqueue("throw", json{{"landing_x", 0.6}});
  res = cli.Get("/api/episodes/pending");
  REQUIRE(res);
  const json pending = json::parse(res->body);
  REQUIRE(pending.size() == 2);
  CHECK(pending[0]["id"] == id);
  CHECK(pending[0]["task"] == "throw");
  CHECK(pending[0]["trace"]["landing_x"] == 0.4);

  res = cli.Get("/api/episodes/" + std::to_string(id));
  REQUIRE(res);
  CHECK(json::parse(res->body)["landing_x"] == 0.4);
  res = cli.Get("/api/episodes/777");
  REQUIRE(res);
  CHECK(res->status == 404);

  const std::string path = "/api/episodes/" + std::to_string(id) + "/reward";
  res = cli.Post(path, R"({"value": 2})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["ok"] == true);
  CHECK(q.wait_for_label(id) == 2.0);
  res = cli.Get("/api/episodes/pending");
  REQUIRE(res);
  CHECK(json::parse(res->body).size() == 1);

  res = cli.Post(path, R"({"value": -1})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 409);
  res = cli.Post("/api/episodes/777/reward", R"({"value": 2})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 404);
  res = cli.Post("/api/episodes/2/reward", R"({"value": 0})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  res = cli.Post("/api/episodes/2/reward", "not json", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  q.set_status({3, 40, 0.25});
  res = cli.Get("/api/status");
  REQUIRE(res);
  const json status = json::parse(res->body);
  CHECK(status["iteration"] == 3);
  CHECK(status["episode"] == 40);
  CHECK(status["mean_reward"] == 0.25);

  server.stop();
  CHECK_FALSE(server.running());
}
