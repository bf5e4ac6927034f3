// Builds a small synthetic memory, classifies held-out queries with
// RankVoting, then unlearns one class and shows that it is gone.

#include <iostream>

#include "vismem/vismem.hpp"

int main() {
  vismem::FixtureSpec spec;
  spec.classes = 5;
  spec.per_class = 40;
  spec.dims = 32;
  spec.spread = 0.08;
  spec.queries_per_class = 10;
  spec.seed = 7;
  const auto fx = vismem::generate_fixture(spec);

  auto memory = vismem::VisualMemory::build(fx.memory);
  const auto queries = vismem::QuerySet::from_pack(fx.queries);

  vismem::VoteConfig vote;
  vote.scheme = vismem::VoteScheme::Rank;
  vote.k = 20;
  const auto report = vismem::evaluate(memory, queries, vote);
  std::cout << "rank voting accuracy at k=20: " << report.at(20) << '\n';

  std::vector<vismem::EntryId> forget;
  const auto target = *memory.find_label("class_0000");
  for (std::size_t r = 0; r < memory.size(); ++r)
    if (memory.label_at(r) == target) forget.push_back(memory.id_at(r));
  memory.remove(forget);

  const auto nn = vismem::exact_search(memory, queries.vectors.front(), memory.size());
  bool leaked = false;
  for (const auto& n : nn.items) leaked |= n.label == target;
  std::cout << "after unlearning class_0000: " << memory.size() << " entries, class reachable: "
            << (leaked ? "yes" : "no") << '\n';
}
