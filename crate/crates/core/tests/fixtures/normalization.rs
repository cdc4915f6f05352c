// Shared by the preprocessing tests and the acceptance suite.
// (name, input, expected normalized text)

const FIXTURES: &[(&str, &str, &str)] = &[
    // Reference examples.
    ("number and abbreviation", "i am 15 yrs old", "i am 00NUM years old"),
    ("url", "see http://example.com/a1", "see 00URL"),
    ("abbreviation and emoticon", "ur cool :)", "your cool"),
    // Non-ASCII stripping.
    ("accented letter dropped", "caf\u{e9} ok", "caf ok"),
    ("emoji dropped", "hi \u{1F600} there", "hi there"),
    ("emoticon revealed by stripping", ":)\u{1F600} yo", "yo"),
    // Emoticons.
    ("standalone emoticons", ":-) ;P <3 xD hi ^_^", "hi"),
    ("trailing emoticon", "cool:)", "cool"),
    ("emoticon-only message", ":( :'(", ""),
    // URLs.
    ("url with digits stays one symbol", "www.site123.com/page/42", "00URL"),
    ("url keeps trailing punctuation", "go to https://a.b/c1.", "go to 00URL."),
    ("long url is a url, not a long word", "http://example.com/a/very/long/path/123456789", "00URL"),
    ("non-ascii inside url", "http://ex\u{e4}mple.com", "00URL"),
    // Long words.
    ("31 characters", "abcdefghijabcdefghijabcdefghijk", "00LW"),
    ("30 characters is not long", "ABCDEFGHIJABCDEFGHIJABCDEFGHIJ", "abcdefghijabcdefghijabcdefghij"),
    ("long numeric token is a long word", "1234567890123456789012345678901", "00LW"),
    ("long word keeps punctuation", "aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa!!", "00LW!!"),
    // Numbers.
    ("30-digit number", "123456789012345678901234567890", "00NUM"),
    ("decimal and signed", "3.5 -2 +7", "00NUM 00NUM 00NUM"),
    ("number with trailing comma", "15, 16", "00NUM, 00NUM"),
    ("digits inside a word are not a number", "15yrs", "15yrs"),
    // Lowercasing and abbreviations.
    ("uppercase abbreviations", "R U ok?", "are you ok?"),
    ("bracketed abbreviation", "(u)", "(you)"),
    ("multi-word expansion", "idk", "i don't know"),
    ("abbreviations containing digits", "gr8 b4 2nite", "great before tonight"),
    // Elongation.
    ("elongation collapses", "Sorryyyy", "sorry"),
    ("two repeats are kept", "soo cool", "soo cool"),
    ("elongation then abbreviation", "Uuuu plzzzz", "you please"),
    ("elongated number is still a number", "1000", "00NUM"),
    // Whitespace and reserved symbols.
    ("whitespace collapses", "a \t  b\n", "a b"),
    ("reserved symbols untouched", "00NUM 00LW 00URL", "00NUM 00LW 00URL"),
    ("empty", "", ""),
];
