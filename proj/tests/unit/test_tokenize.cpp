#include <capbias/tokenize.hpp>

#include <doctest.h>

#include <string>
#include <utility>
#include <vector>

using capbias::TokenSeq;

TEST_CASE("tokenize splits on whitespace") {
    CHECK(capbias::tokenize("a photo of a woman who is reading") ==
          TokenSeq{"a", "photo", "of", "a", "woman", "who", "is", "reading"});
}

TEST_CASE("tokenize lowercases and strips punctuation") {
    CHECK(capbias::tokenize("A Woman, who is a Doctor.") == TokenSeq{"a", "woman", "who", "is", "a", "doctor"});
    CHECK(capbias::tokenize("(\"Hi!\") [there]; ok: 'yes'?") == TokenSeq{"hi", "there", "ok", "yes"});
}

TEST_CASE("tokenize empty and blank input") {
    CHECK(capbias::tokenize("").empty());
    CHECK(capbias::tokenize("   \t\n ").empty());
    CHECK(capbias::tokenize(" , . ! ").empty());
}

TEST_CASE("tokenize treats unicode spaces as separators") {
    CHECK(capbias::tokenize("a\xC2\xA0man") == TokenSeq{"a", "man"});
    CHECK(capbias::tokenize("a\xE2\x80\x83woman\xE3\x80\x80" "cooking") == TokenSeq{"a", "woman", "cooking"});
}

TEST_CASE("join round trips tokenized text") {
    const std::string s = "a man who is a nurse";
    CHECK(capbias::join(capbias::tokenize(s)) == s);
    CHECK(capbias::join({}).empty());
}

// Expected stems come from NLTK's PorterStemmer in ORIGINAL_ALGORITHM mode.
TEST_CASE("porter stemmer matches the reference implementation") {
    const std::vector<std::pair<std::string, std::string>> cases = {
        {"reading", "read"},       {"nurses", "nurs"},         {"a", "a"},
        {"caresses", "caress"},    {"ponies", "poni"},         {"ties", "ti"},
        {"caress", "caress"},      {"cats", "cat"},            {"feed", "feed"},
        {"agreed", "agre"},        {"plastered", "plaster"},   {"bled", "bled"},
        {"motoring", "motor"},     {"sing", "sing"},           {"conflated", "conflat"},
        {"troubled", "troubl"},    {"sized", "size"},          {"hopping", "hop"},
        {"tanned", "tan"},         {"falling", "fall"},        {"hissing", "hiss"},
        {"fizzed", "fizz"},        {"failing", "fail"},        {"filing", "file"},
        {"happy", "happi"},        {"sky", "sky"},             {"relational", "relat"},
        {"conditional", "condit"}, {"rational", "ration"},     {"valenci", "valenc"},
        {"hesitanci", "hesit"},    {"digitizer", "digit"},     {"conformabli", "conform"},
        {"radicalli", "radic"},    {"differentli", "differ"},  {"vileli", "vile"},
        {"analogousli", "analog"}, {"vietnamization", "vietnam"}, {"predication", "predic"},
        {"operator", "oper"},      {"feudalism", "feudal"},    {"decisiveness", "decis"},
        {"hopefulness", "hope"},   {"callousness", "callous"}, {"formaliti", "formal"},
        {"sensitiviti", "sensit"}, {"sensibiliti", "sensibl"}, {"triplicate", "triplic"},
        {"formative", "form"},     {"formalize", "formal"},    {"electriciti", "electr"},
        {"electrical", "electr"},  {"hopeful", "hope"},        {"goodness", "good"},
        {"revival", "reviv"},      {"allowance", "allow"},     {"inference", "infer"},
        {"airliner", "airlin"},    {"gyroscopic", "gyroscop"}, {"adjustable", "adjust"},
        {"defensible", "defens"},  {"irritant", "irrit"},      {"replacement", "replac"},
        {"adjustment", "adjust"},  {"dependent", "depend"},    {"adoption", "adopt"},
        {"homologou", "homolog"},  {"communism", "commun"},    {"activate", "activ"},
        {"angulariti", "angular"}, {"homologous", "homolog"},  {"effective", "effect"},
        {"bowdlerize", "bowdler"}, {"probate", "probat"},      {"rate", "rate"},
        {"cease", "ceas"},         {"controll", "control"},    {"roll", "roll"},
        {"generalizations", "gener"}, {"oscillators", "oscil"}, {"washing", "wash"},
        {"cooking", "cook"},       {"doctor", "doctor"},       {"engineer", "engin"},
        {"accountant", "account"}, {"basketball", "basketbal"}, {"umbrella", "umbrella"},
        {"bicycle", "bicycl"},
    };
    for (const auto& [word, expected] : cases) {
        CAPTURE(word);
        CHECK(capbias::stem(word) == expected);
    }
}

TEST_CASE("stem leaves short words alone") {
    CHECK(capbias::stem("is") == "is");
    CHECK(capbias::stem("") == "");
}
