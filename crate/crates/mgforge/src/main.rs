fn main() {
    // CLI wired up once the bench module lands.
}
