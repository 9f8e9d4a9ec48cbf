//! Hand-labeled segmentation fixture: each case is a response and its gold
//! sentences. The response text is the sentences joined by the separator.

use markerconf::segmenter::{RuleSegmenter, Segmenter};

const CASES: &[(&str, &[&str])] = &[
    (" ", &["I think the answer is Paris.", "It has been the capital since the 10th century."]),
    (" ", &["The speed of light is about 3.0 x 10^8 m/s.", "This value is exact by definition."]),
    (" ", &["Dr. Smith published the result in 1999.", "Perhaps it was later."]),
    (" ", &["It was probably signed by J. R. Tolkien.", "I am fairly sure of this."]),
    (" ", &["The U.S. entered the war in 1917.", "Most historians agree on that date."]),
    (" ", &["Answer: B.", "The other options are unlikely."]),
    (" ", &["Is it Mars?", "No, it is almost certainly Jupiter!"]),
    (" ", &["Well... it could be either one.", "I would guess the first."]),
    (" ", &["He said \"It is over.\"", "Then he left."]),
    (" ", &["The process (e.g. photosynthesis) converts light into energy.", "It occurs in chloroplasts."]),
    ("\n", &["The population is roughly 8.4 million.", "That figure comes from 2020."]),
    (" ", &["Mt. Everest is the tallest mountain above sea level.", "Its height is 8,849 m."]),
    (" ", &["It is likely Mercury.", "Venus is hotter, though."]),
    (" ", &["Prof. Lee and Mrs. Chan co-authored it.", "I believe it appeared in Vol. 3 of the journal."]),
    (" ", &["Perhaps X.", "Y is Z."]),
    (" ", &["The treaty was signed on Jan. 5, 1920.", "It ended the conflict."]),
    (" ", &["I'm not sure.", "Maybe 42?"]),
    (" ", &["The answer is 3.14.", "Pi is irrational."]),
    (" ", &["Approximately 70% of Earth is covered by water.", "Most of it is in the oceans."]),
    (" ", &["Without a doubt, the author is Austen.", "She wrote it in 1813."]),
    (" ", &["It might be the Nile (approx. 6,650 km long).", "The Amazon is a close second."]),
    ("\n\n", &["First, consider the premise.", "Second, check the conclusion."]),
    (" ", &["The company is Acme Inc. in Delaware.", "It was founded in 1901."]),
    (" ", &["(This is a parenthetical remark.)", "The main claim follows."]),
    (" ", &["I guess it's 12.", "Or possibly 13."]),
];

#[test]
fn fixture_has_fifty_sentences() {
    assert_eq!(CASES.iter().map(|(_, s)| s.len()).sum::<usize>(), 50);
}

#[test]
fn segmenter_matches_hand_labels() {
    let seg = RuleSegmenter::default();
    let mut wrong = Vec::new();
    for (sep, gold) in CASES {
        let text = gold.join(sep);
        let got = seg.sentences(&text);
        if got != *gold {
            wrong.push(format!("{text:?}\n  got  {got:?}\n  want {gold:?}"));
        }
    }
    assert!(wrong.is_empty(), "{} case(s) differ:\n{}", wrong.len(), wrong.join("\n"));
}

#[test]
fn spans_are_ordered_and_trimmed() {
    let seg = RuleSegmenter::default();
    for (sep, gold) in CASES {
        let text = format!("  {}  ", gold.join(sep));
        let spans = seg.segment(&text);
        for (i, s) in spans.iter().enumerate() {
            assert_eq!(s.index, i);
            assert_eq!(s.slice(&text), s.slice(&text).trim());
        }
        assert!(spans.windows(2).all(|w| w[0].end <= w[1].start));
    }
}
