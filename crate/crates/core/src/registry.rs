use crate::error::{Error, Result};

type Constructor<T> = fn() -> Box<T>;

/// Name-keyed table of constructors for one family of strategies.
pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: Vec<(&'static str, Constructor<T>)>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Registers `ctor` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &'static str, ctor: Constructor<T>) -> &mut Self {
        match self.entries.iter_mut().find(|(n, _)| *n == name) {
            Some(entry) => entry.1 = ctor,
            None => self.entries.push((name, ctor)),
        }
        self
    }

    pub fn create(&self, name: &str) -> Result<Box<T>> {
        let wanted = name.to_ascii_lowercase();
        self.entries
            .iter()
            .find(|(n, _)| *n == wanted)
            .map(|(_, ctor)| ctor())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        let wanted = name.to_ascii_lowercase();
        self.entries.iter().any(|(n, _)| *n == wanted)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> &'static str;
    }
    struct Hi;
    struct Yo;
    impl Greeter for Hi {
        fn greet(&self) -> &'static str {
            "hi"
        }
    }
    impl Greeter for Yo {
        fn greet(&self) -> &'static str {
            "yo"
        }
    }

    #[test]
    fn lookup_is_case_insensitive_and_replaceable() {
        let mut r: Registry<dyn Greeter> = Registry::new("greeter");
        r.register("hi", || Box::new(Hi));
        assert_eq!(r.create("HI").unwrap().greet(), "hi");
        r.register("hi", || Box::new(Yo));
        assert_eq!(r.create("hi").unwrap().greet(), "yo");
        assert_eq!(r.names(), vec!["hi"]);
        let err = r.create("nope").err().unwrap();
        assert!(err.to_string().contains("known: hi"));
    }
}
