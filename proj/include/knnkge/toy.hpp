#pragma once
// Bundled synthetic knowledge graph so every experiment runs offline. A small
// world of lands, languages, towns, trades and people, with heavy-tailed
// person activity: a few prolific travellers and many people who occur in a
// handful of facts. Descriptions carry the attributes the relations encode,
// which is what gives retrieval something to work with.

#include <cstdint>
#include <cstdio>
#include <string>
#include <unordered_set>
#include <vector>

#include "knnkge/kg.hpp"
#include "knnkge/rng.hpp"

namespace knnkge {

struct ToyLayout {
    uint32_t lands = 6;
    uint32_t towns = 34;
    uint32_t occupations = 14;
    uint32_t persons = 160;
};

// Deterministic per seed. Entity ids follow the intern order lands, languages,
// towns, occupations, persons; triples are emitted structural facts first,
// then one block per person.
inline KnowledgeGraph make_toy_graph(uint64_t seed, const ToyLayout& layout = {}) {
    static const char* kOccupations[] = {"teacher", "baker",  "farmer", "doctor", "singer",
                                         "barber",  "tailor", "miner",  "sailor", "potter",
                                         "weaver",  "hunter", "clerk",  "smith"};
    if (layout.lands < 1 || layout.lands > 26 || layout.towns < layout.lands ||
        layout.occupations < 1 || layout.occupations > 14 || layout.persons < 1)
        fail(ErrorKind::Argument, "toy layout out of range");

    KnowledgeGraph g;
    const uint32_t r_nationality = g.intern_relation("nationality");
    const uint32_t r_lives = g.intern_relation("lives_in");
    const uint32_t r_works = g.intern_relation("works_as");
    const uint32_t r_speaks = g.intern_relation("speaks");
    const uint32_t r_located = g.intern_relation("located_in");
    const uint32_t r_capital = g.intern_relation("capital_of");
    const uint32_t r_official = g.intern_relation("official_language");
    const uint32_t r_visited = g.intern_relation("visited");

    std::vector<uint32_t> lands, langs, towns, occs, persons;
    for (uint32_t i = 0; i < layout.lands; ++i)
        lands.push_back(g.intern_entity(std::string("land") + char('a' + i)));
    for (uint32_t i = 0; i < layout.lands; ++i)
        langs.push_back(g.intern_entity(std::string("lang") + char('a' + i)));
    for (uint32_t j = 0; j < layout.towns; ++j)
        towns.push_back(g.intern_entity(std::string("town") + char('a' + j / 26) +
                                        char('a' + j % 26)));
    for (uint32_t i = 0; i < layout.occupations; ++i)
        occs.push_back(g.intern_entity(kOccupations[i]));
    char name[16];
    for (uint32_t i = 0; i < layout.persons; ++i) {
        std::snprintf(name, sizeof(name), "p%03u", i + 1);
        persons.push_back(g.intern_entity(name));
    }

    // town j belongs to land j % lands; the first town of each land is its capital
    auto land_of_town = [&](uint32_t j) { return j % layout.lands; };
    std::vector<std::vector<uint32_t>> towns_in_land(layout.lands);
    for (uint32_t j = 0; j < layout.towns; ++j)
        towns_in_land[land_of_town(j)].push_back(j);

    auto land_word = [&](uint32_t i) { return g.entity_labels[lands[i]]; };
    auto lang_word = [&](uint32_t i) { return g.entity_labels[langs[i]]; };
    auto town_word = [&](uint32_t j) { return g.entity_labels[towns[j]]; };
    auto occ_word = [&](uint32_t o) { return g.entity_labels[occs[o]]; };

    for (uint32_t i = 0; i < layout.lands; ++i) {
        g.descriptions[lands[i]] = "a land where people speak " + lang_word(i);
        g.descriptions[langs[i]] = "the tongue spoken in " + land_word(i);
    }
    for (uint32_t j = 0; j < layout.towns; ++j)
        g.descriptions[towns[j]] = j < layout.lands
                                       ? "the capital town of " + land_word(land_of_town(j))
                                       : "a town in " + land_word(land_of_town(j));
    for (uint32_t o = 0; o < layout.occupations; ++o)
        g.descriptions[occs[o]] = "the trade of a " + occ_word(o);

    for (uint32_t j = 0; j < layout.towns; ++j)
        g.triples.push_back({towns[j], r_located, lands[land_of_town(j)]});
    for (uint32_t i = 0; i < layout.lands; ++i) {
        g.triples.push_back({towns[i], r_capital, lands[i]});
        g.triples.push_back({lands[i], r_official, langs[i]});
    }

    Rng rng(seed);
    for (uint32_t i = 0; i < layout.persons; ++i) {
        const uint32_t home = static_cast<uint32_t>(rng.below(layout.towns));
        const uint32_t land = land_of_town(home);
        const uint32_t occ = static_cast<uint32_t>(rng.below(layout.occupations));

        std::string desc =
            "a " + occ_word(occ) + " from " + town_word(home) + " who speaks " + lang_word(land);
        g.triples.push_back({persons[i], r_nationality, lands[land]});
        g.triples.push_back({persons[i], r_lives, towns[home]});
        g.triples.push_back({persons[i], r_works, occs[occ]});
        g.triples.push_back({persons[i], r_speaks, langs[land]});
        if (rng.uniform() < 0.5 && layout.lands > 1) {
            uint32_t other = static_cast<uint32_t>(rng.below(layout.lands - 1));
            if (other >= land) ++other;
            g.triples.push_back({persons[i], r_speaks, langs[other]});
            desc += " and " + lang_word(other);
        }
        g.descriptions[persons[i]] = desc;

        // heavy-tailed travel: the first few people visit a lot, most barely
        uint64_t trips;
        if (i < layout.persons / 7)
            trips = 8 + rng.below(6);
        else if (i < layout.persons * 2 / 5)
            trips = 3 + rng.below(4);
        else
            trips = rng.below(4);
        std::unordered_set<uint32_t> visited;
        for (uint64_t v = 0; v < trips; ++v) {
            uint32_t town;
            if (rng.uniform() < 0.7) {
                const std::vector<uint32_t>& pool = towns_in_land[land];
                town = pool[rng.below(pool.size())];
            } else {
                town = static_cast<uint32_t>(rng.below(layout.towns));
            }
            if (town == home || !visited.insert(town).second) continue;
            g.triples.push_back({persons[i], r_visited, towns[town]});
        }
    }
    return g;
}

}  // namespace knnkge
