fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("cargo sets CARGO_MANIFEST_DIR");
    // The header is committed so C consumers never need cbindgen; the build
    // script keeps it in sync with the Rust surface (write_to_file leaves
    // the file untouched when nothing changed).
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(format!("{crate_dir}/include/ttedge.h"));
        }
        Err(e) => {
            println!("cargo:warning=cbindgen failed, shipping the committed header unchanged: {e}")
        }
    }
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
}
