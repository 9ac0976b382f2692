#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "jsim/overlay/overlay.hpp"
#include "support/jungle_gen.hpp"

using namespace jsim;
using namespace jsim::overlay;
using netsim::Fabric;
using netsim::FabricNode;
using netsim::LinkRule;
using netsim::NodeKind;
using netsim::World;
using wire::Bytes;

namespace {

Bytes bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }
std::string text(const Bytes& b) { return std::string(b.begin(), b.end()); }

}  // namespace

TEST_CASE("a fresh hub knows only itself and requires an addressable host") {
  World world;
  Fabric fabric(world);
  fabric.add_node({"front", NodeKind::frontend, true});
  fabric.add_node({"hidden", NodeKind::compute, false});

  auto hub = start_hub(fabric, "front");
  CHECK(hub->known_hubs() == std::set<std::string>{hub->id()});
  CHECK(hub->attached_clients().empty());
  CHECK_THROWS_AS(start_hub(fabric, "hidden"), NodeNotAddressable);
}

TEST_CASE("two linked hubs know each other within one gossip round") {
  World world;
  Fabric fabric(world);
  fabric.add_node({"f0", NodeKind::frontend, true});
  fabric.add_node({"f1", NodeKind::frontend, true});
  auto h0 = start_hub(fabric, "f0");
  auto h1 = start_hub(fabric, "f1");
  link_hubs(*h0, *h1);
  world.run_for(h0->config().gossip_period);
  std::set<std::string> both{h0->id(), h1->id()};
  CHECK(h0->known_hubs() == both);
  CHECK(h1->known_hubs() == both);
}

TEST_CASE("hub knowledge converges to the transitive closure of the link graph") {
  // Random link graphs, including disconnected ones. Oracle: breadth-first
  // closure over the edge list; every hub must know exactly its component
  // after 2 * diameter rounds.
  std::mt19937_64 rng(20260825);
  for (int iter = 0; iter < 25; ++iter) {
    World world;
    Fabric fabric(world);
    std::size_t n = 3 + rng() % 5;
    std::vector<HubPtr> hubs;
    for (std::size_t i = 0; i < n; ++i) {
      fabric.add_node({"f" + std::to_string(i), NodeKind::frontend, true});
      hubs.push_back(start_hub(fabric, "f" + std::to_string(i)));
    }
    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t b = 1; b < n; ++b) {
      if (rng() % 100 < 25) continue;  // leave some hubs isolated
      std::size_t a = rng() % b;
      link_hubs(*hubs[a], *hubs[b]);
      adj[a].push_back(b);
      adj[b].push_back(a);
    }

    // Oracle closure + diameters per component.
    std::vector<std::vector<int>> dist(n, std::vector<int>(n, -1));
    std::size_t dmax = 1;
    for (std::size_t s = 0; s < n; ++s) {
      std::vector<std::size_t> q{s};
      dist[s][s] = 0;
      for (std::size_t qi = 0; qi < q.size(); ++qi)
        for (std::size_t nx : adj[q[qi]])
          if (dist[s][nx] < 0) {
            dist[s][nx] = dist[s][q[qi]] + 1;
            q.push_back(nx);
          }
      for (int d : dist[s]) dmax = std::max<std::size_t>(dmax, d > 0 ? d : 0);
    }

    world.run_for(2 * dmax * hubs[0]->config().gossip_period + 5);
    for (std::size_t s = 0; s < n; ++s) {
      std::set<std::string> expect;
      for (std::size_t t = 0; t < n; ++t)
        if (dist[s][t] >= 0) expect.insert(hubs[t]->id());
      CHECK(hubs[s]->known_hubs() == expect);
    }
  }
}

TEST_CASE("link_hubs picks whichever direction is establishable") {
  World world;
  Fabric fabric(world);
  fabric.add_node({"f0", NodeKind::frontend, true});
  fabric.add_node({"f1", NodeKind::frontend, true});
  fabric.add_policy({"f0", "f1", LinkRule::deny_inbound, 1});  // f1 must dial f0

  auto h0 = start_hub(fabric, "f0");
  auto h1 = start_hub(fabric, "f1");
  link_hubs(*h0, *h1);
  CHECK(h0->linked_to(h1->id()));
  CHECK(h1->linked_to(h0->id()));

  fabric.add_node({"f2", NodeKind::frontend, true});
  fabric.add_policy({"f0", "f2", LinkRule::deny_all, 1});
  auto h2 = start_hub(fabric, "f2");
  CHECK_THROWS_AS(link_hubs(*h0, *h2), LinkUnreachable);
}

TEST_CASE("attach works outbound from behind a firewall, fails under deny-all") {
  World world;
  Fabric fabric(world);
  fabric.add_node({"front", NodeKind::frontend, true});
  fabric.add_node({"worker", NodeKind::compute, false});
  fabric.add_node({"cut", NodeKind::standalone, true});
  fabric.add_policy({"*", "worker", LinkRule::deny_inbound, 1});
  fabric.add_policy({"cut", "front", LinkRule::deny_all, 1});

  auto hub = start_hub(fabric, "front");
  OverlayClient walled(fabric, "worker");
  auto va = walled.attach("front");
  CHECK(va.home_hub == hub->id());
  CHECK(va.node == "worker");
  CHECK(hub->attached_clients() == std::set<std::string>{va.client_id});

  OverlayClient cut(fabric, "cut");
  CHECK_THROWS_AS(cut.attach("front"), HubUnreachable);
}

TEST_CASE("auto-generated client ids are distinct") {
  World world;
  Fabric fabric(world);
  fabric.add_node({"front", NodeKind::frontend, true});
  auto hub = start_hub(fabric, "front");
  OverlayClient a(fabric, "front"), b(fabric, "front");
  CHECK(a.attach("front").client_id != b.attach("front").client_id);
}

TEST_CASE("smart_connect on an open fabric is direct, and never pays for a relay") {
  World world;
  Fabric fabric(world);
  fabric.add_node({"f0", NodeKind::frontend, true});
  fabric.add_node({"f1", NodeKind::frontend, true});
  auto h0 = start_hub(fabric, "f0");
  auto h1 = start_hub(fabric, "f1");
  link_hubs(*h0, *h1);
  OverlayClient a(fabric, "f0"), b(fabric, "f1");
  auto va = a.attach("f0", "a");
  auto vb = b.attach("f1", "b");
  world.run_for(300);

  std::string got;
  b.listen([&](StreamPtr s, std::string from, Route route) {
    CHECK(from == "a");
    CHECK(route.strategy == Strategy::direct);
    s->on_data([&got, s](Bytes d) { got += text(d); });
  });
  auto [stream, route] = a.smart_connect(vb);
  CHECK(route == Route{Strategy::direct, {}});
  stream->send(bytes("hi"));
  world.run_for(10);
  CHECK(got == "hi");
}

TEST_CASE("deny-inbound target produces a reverse connection that carries data both ways") {
  World world;
  Fabric fabric(world);
  fabric.add_node({"front", NodeKind::frontend, true});
  fabric.add_node({"walled", NodeKind::standalone, true});
  fabric.add_policy({"*", "walled", LinkRule::deny_inbound, 1});

  auto hub = start_hub(fabric, "front");
  OverlayClient a(fabric, "front"), b(fabric, "walled");
  auto va = a.attach("front", "a");
  auto vb = b.attach("front", "b");
  world.run_for(200);

  StreamPtr accepted;
  std::string from_seen;
  Route route_seen;
  b.listen([&](StreamPtr s, std::string from, Route route) {
    accepted = std::move(s);
    from_seen = from;
    route_seen = route;
  });

  auto [stream, route] = a.smart_connect(vb);
  CHECK(route == Route{Strategy::reverse, {}});
  world.run_for(10);
  REQUIRE(accepted);
  CHECK(from_seen == "a");
  CHECK(route_seen.strategy == Strategy::reverse);

  std::string at_b, at_a;
  accepted->on_data([&](Bytes d) { at_b += text(d); });
  stream->on_data([&](Bytes d) { at_a += text(d); });
  stream->send(bytes("ping"));
  accepted->send(bytes("pong"));
  world.run_for(10);
  CHECK(at_b == "ping");
  CHECK(at_a == "pong");
}

TEST_CASE("mutually unreachable clients get a routed connection with the expected hub chain") {
  World world;
  Fabric fabric(world);
  fabric.add_node({"f0", NodeKind::frontend, true});
  fabric.add_node({"f1", NodeKind::frontend, true});
  fabric.add_node({"p0", NodeKind::compute, false});  // private networks
  fabric.add_node({"p1", NodeKind::compute, false});
  auto h0 = start_hub(fabric, "f0");
  auto h1 = start_hub(fabric, "f1");
  link_hubs(*h0, *h1);

  OverlayClient a(fabric, "p0"), b(fabric, "p1");
  auto va = a.attach("f0", "a");
  auto vb = b.attach("f1", "b");
  world.run_for(400);

  StreamPtr accepted;
  b.listen([&](StreamPtr s, std::string, Route route) {
    CHECK(route.strategy == Strategy::routed);
    accepted = std::move(s);
  });

  auto [stream, route] = a.smart_connect(vb);
  CHECK(route.strategy == Strategy::routed);
  CHECK(route.hub_chain == std::vector<std::string>{h0->id(), h1->id()});

  std::string at_b;
  world.run_for(50);
  REQUIRE(accepted);
  accepted->on_data([&](Bytes d) { at_b += text(d); });
  stream->send(bytes("across"));
  world.run_for(50);
  CHECK(at_b == "across");
}

TEST_CASE("routed stream close reaches the other side") {
  World world;
  Fabric fabric(world);
  fabric.add_node({"f0", NodeKind::frontend, true});
  fabric.add_node({"p0", NodeKind::compute, false});
  fabric.add_node({"p1", NodeKind::compute, false});
  auto h0 = start_hub(fabric, "f0");
  OverlayClient a(fabric, "p0"), b(fabric, "p1");
  auto va = a.attach("f0", "a");
  auto vb = b.attach("f0", "b");
  world.run_for(200);

  StreamPtr accepted;
  b.listen([&](StreamPtr s, std::string, Route) { accepted = std::move(s); });
  auto [stream, route] = a.smart_connect(vb);
  CHECK(route.hub_chain == std::vector<std::string>{h0->id()});
  world.run_for(20);
  REQUIRE(accepted);

  bool closed = false;
  accepted->on_closed([&] { closed = true; });
  stream->close();
  world.run_for(20);
  CHECK(closed);
  CHECK_THROWS_AS(stream->send(bytes("late")), StreamClosed);
}

TEST_CASE("relay transparency: routed bytes match a direct conduit bit for bit") {
  // Same payload schedule over a direct stream and over a two-hub relay;
  // the receivers must see identical byte sequences in identical order.
  auto run = [](bool isolate) {
    World world;
    Fabric fabric(world);
    fabric.add_node({"f0", NodeKind::frontend, true});
    fabric.add_node({"f1", NodeKind::frontend, true});
    fabric.add_node({"n0", NodeKind::standalone, isolate ? false : true});
    fabric.add_node({"n1", NodeKind::standalone, isolate ? false : true});
    auto h0 = start_hub(fabric, "f0");
    auto h1 = start_hub(fabric, "f1");
    link_hubs(*h0, *h1);
    OverlayClient a(fabric, "n0"), b(fabric, "n1");
    auto va = a.attach("f0", "a");
    auto vb = b.attach("f1", "b");
    world.run_for(400);

    std::vector<std::string> got;
    b.listen([&](StreamPtr s, std::string, Route) {
      auto keep = s;
      s->on_data([&got, keep](Bytes d) { got.push_back(text(d)); });
    });
    auto [stream, route] = a.smart_connect(vb);
    CHECK(route.strategy == (isolate ? Strategy::routed : Strategy::direct));
    std::mt19937_64 rng(7);
    for (int i = 0; i < 40; ++i) {
      std::string payload(1 + rng() % 60, '\0');
      for (auto& ch : payload) ch = static_cast<char>('A' + rng() % 26);
      stream->send(bytes(payload));
    }
    world.run_for(200);
    return got;
  };
  auto direct = run(false);
  auto routed = run(true);
  REQUIRE(direct.size() == 40);
  CHECK(direct == routed);
}

TEST_CASE("completeness and strategy fidelity over random jungles") {
  // The overlay must connect exactly when the policy graph says a path
  // exists, and must pick the cheapest strategy that works.
  int routes[3] = {0, 0, 0};
  int noroutes = 0;
  for (std::uint64_t seed = 1; seed <= 120; ++seed) {
    auto j = jsim::testsupport::make_random_jungle(seed);
    for (auto& c : j.clients)
      c->listen([keep = std::vector<StreamPtr>()](StreamPtr s, std::string, Route) mutable {
        keep.push_back(std::move(s));
      });
    std::mt19937_64 rng(seed * 77);
    for (int pair = 0; pair < 6; ++pair) {
      std::size_t a = rng() % j.clients.size();
      std::size_t b = rng() % j.clients.size();
      if (a == b) continue;
      auto expect = jsim::testsupport::expected_strategy(j, a, b);
      try {
        auto [stream, route] = j.clients[a]->smart_connect(j.addrs[b]);
        REQUIRE_MESSAGE(expect.has_value(),
                        "seed ", seed, ": connected where oracle says NoRoute");
        CHECK_MESSAGE(route.strategy == *expect, "seed ", seed, ": strategy mismatch");
        if (route.strategy == Strategy::routed)
          CHECK(route.hub_chain == jsim::testsupport::expected_chain(j, a, b));
        ++routes[static_cast<int>(route.strategy)];
      } catch (const NoRoute&) {
        CHECK_MESSAGE(!expect.has_value(), "seed ", seed, ": NoRoute where oracle says ",
                      to_string(*expect));
        ++noroutes;
      }
    }
  }
  // The generator must actually exercise all four outcomes.
  CHECK(routes[0] > 50);
  CHECK(routes[1] > 10);
  CHECK(routes[2] > 10);
  CHECK(noroutes > 5);
}
