//! Doctest shims keeping the book's code samples compiling against the
//! current API. Each chapter's fenced Rust blocks run under
//! `cargo test --doc`.

#[cfg(doctest)]
macro_rules! book_chapter {
    ($name:ident, $path:literal) => {
        #[doc = include_str!($path)]
        pub struct $name;
    };
}

#[cfg(doctest)]
book_chapter!(Introduction, "../../../book/src/introduction.md");
#[cfg(doctest)]
book_chapter!(DataChapter, "../../../book/src/data.md");
#[cfg(doctest)]
book_chapter!(SubgroupsChapter, "../../../book/src/subgroups.md");
#[cfg(doctest)]
book_chapter!(ModelChapter, "../../../book/src/model.md");
#[cfg(doctest)]
book_chapter!(SamplerChapter, "../../../book/src/sampler.md");
#[cfg(doctest)]
book_chapter!(DecisionsChapter, "../../../book/src/decisions.md");
#[cfg(doctest)]
book_chapter!(SimulationChapter, "../../../book/src/simulation.md");
#[cfg(doctest)]
book_chapter!(CliChapter, "../../../book/src/cli.md");
